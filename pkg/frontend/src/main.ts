import { StudioApi } from "./api.js";
import { StudioUi } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("service") ?? "";
const ui = new StudioUi(new StudioApi(base));
ui.boot().catch((err) => {
  const node = document.getElementById("error");
  if (node) node.textContent = String(err);
});
