import { ApiClient } from "./api.js";
import { ReviewApp } from "./ui.js";

function tokenFromLocation(): string | null {
  const params = new URLSearchParams(window.location.search);
  return params.get("token");
}

document.addEventListener("DOMContentLoaded", () => {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const api = new ApiClient("", undefined, tokenFromLocation());
  const app = new ReviewApp(api, root);
  void app.start();
});
