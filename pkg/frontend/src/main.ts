import { ApiClient } from "./api.js";
import { ReviewApp } from "./app.js";
import { connectEvents } from "./events.js";

// Entry point for the browser build. Serve the service on the same origin
// (or pass ?base=) and open ?assessment=<id>.

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const assessmentId = params.get("assessment");
  const root = document.getElementById("root");
  if (!root) return;
  if (!assessmentId) {
    root.textContent = "Pass ?assessment=<id> to open an assessment.";
    return;
  }
  const client = new ApiClient(params.get("base") ?? window.location.origin);
  const app = await ReviewApp.boot(root, client, assessmentId);
  connectEvents(
    (after) => client.eventsUrl(assessmentId, after),
    app.log,
    (event) => app.handleEvent(event),
  );
}

void start();
