import { ApiClient } from "./api.js";
import { App } from "./app.js";

addEventListener("load", () => {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const app = new App(new ApiClient(), root);
  void app.start();
});
