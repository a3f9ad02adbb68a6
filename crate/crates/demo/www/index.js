import init, { zipfCurve, testCard, augmentPreview, scorePairs } from "./pkg/finer_demo.js";

const OPS = ["random_crop", "color_jitter", "horizontal_flip", "rotation", "perspective"];
const $ = (id) => document.getElementById(id);

function showError(el, e) {
  el.textContent = String(e.message ?? e);
  el.classList.add("err");
}

function drawZipf() {
  const bars = $("bars");
  bars.replaceChildren();
  $("z-total").classList.remove("err");
  try {
    const counts = zipfCurve(+$("z-n").value, +$("z-s").value, +$("z-lo").value, +$("z-hi").value);
    const hi = Math.max(...counts);
    for (const c of counts) {
      const d = document.createElement("div");
      d.style.height = `${(100 * c) / hi}%`;
      d.title = c;
      bars.append(d);
    }
    $("z-total").textContent = `${counts.reduce((a, b) => a + b, 0)} discovery images`;
  } catch (e) {
    showError($("z-total"), e);
  }
}

let source = null;

function pngUrl(bytes) {
  return URL.createObjectURL(new Blob([bytes], { type: "image/png" }));
}

function drawAugment() {
  const tiles = $("a-tiles");
  tiles.replaceChildren();
  const ops = OPS.filter((op) => $(`op-${op}`).checked).join(",");
  const seed = BigInt($("a-seed").value || 0);
  const add = (bytes, title) => {
    const img = document.createElement("img");
    img.src = pngUrl(bytes);
    img.title = title;
    tiles.append(img);
  };
  add(source, "original");
  try {
    for (let i = 0; i < 10; i++) add(augmentPreview(source, ops, seed, i), `copy ${i}`);
  } catch (e) {
    const p = document.createElement("p");
    showError(p, e);
    tiles.append(p);
  }
}

function drawScore() {
  const out = $("c-out");
  out.classList.remove("err");
  try {
    const r = JSON.parse(scorePairs($("c-input").value));
    const lines = r.matching.map(([p, t]) => `  ${p} -> ${t}`);
    out.textContent = `cACC ${(100 * r.cacc).toFixed(1)}% (${r.matched}/${r.n})\nmatching:\n${lines.join("\n")}`;
  } catch (e) {
    showError(out, e);
  }
}

await init();

for (const id of ["z-n", "z-s", "z-lo", "z-hi"]) $(id).addEventListener("input", drawZipf);

$("a-ops").append("ops (none ticked = random subset): ");
for (const op of OPS) {
  const label = document.createElement("label");
  label.innerHTML = `<input type="checkbox" id="op-${op}"> ${op}`;
  $("a-ops").append(label);
  label.firstChild.addEventListener("change", drawAugment);
}
$("a-seed").addEventListener("input", drawAugment);
$("a-file").addEventListener("change", async (ev) => {
  const file = ev.target.files[0];
  if (file) {
    source = new Uint8Array(await file.arrayBuffer());
    drawAugment();
  }
});
$("c-input").addEventListener("input", drawScore);

source = testCard(96);
drawZipf();
drawAugment();
drawScore();
