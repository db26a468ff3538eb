import init, { order_shape, order_grid, describe_ppl } from "./pkg/lodpatch_demo.js";

const $ = (id) => document.getElementById(id);
let shapeData = null;
let gridData = null;

function drawShape() {
  const canvas = $("shape-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!shapeData) return;
  const maxLevel = Number($("show-level").value);
  $("show-level-value").textContent = maxLevel;
  const s = canvas.width;
  shapeData.points.forEach((p, i) => {
    const l = shapeData.level[i];
    if (l < 0 || l > maxLevel) return;
    // Oblique projection so depth stays visible.
    const x = (p[0] + 0.35 * p[2]) / 1.35;
    const y = (p[1] + 0.35 * p[2]) / 1.35;
    ctx.fillStyle = `hsl(${(l * 55) % 360}, 70%, 45%)`;
    ctx.fillRect(x * s - 1.5, s - y * s - 1.5, 3, 3);
  });
}

function runShape() {
  try {
    shapeData = JSON.parse(order_shape(
      $("shape").value, Number($("count").value), BigInt($("seed").value),
      Number($("levels").value), $("intra").value));
    $("show-level").max = $("levels").value;
    const summary = {
      ppl: shapeData.ppl,
      dim_lod_ransac: shapeData.dim_lod_ransac.fused,
      dim_lod_median: shapeData.dim_lod_median.fused,
      dim_cov: shapeData.dim_cov,
    };
    $("shape-out").textContent = JSON.stringify(summary, null, 1);
  } catch (e) {
    shapeData = null;
    $("shape-out").textContent = String(e);
  }
  drawShape();
}

function drawGrid() {
  const canvas = $("grid-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!gridData) return;
  const n = Number($("grid-prefix").value);
  $("grid-prefix-value").textContent = n;
  const s = canvas.width;
  const cell = s / 16;
  gridData.points.slice(0, n).forEach((p, i) => {
    ctx.fillStyle = `hsl(${(240 * i) / 256}, 70%, 50%)`;
    ctx.fillRect(p[0] * s - cell / 2 + 1, s - p[1] * s - cell / 2 + 1, cell - 2, cell - 2);
  });
}

function runGrid() {
  try {
    gridData = JSON.parse(order_grid($("grid-kind").value, 4));
    $("grid-out").textContent = gridData.prefixes
      .map((p) => `first ${p.n}: star discrepancy ~ ${p.discrepancy.toFixed(4)}`)
      .join("\n");
  } catch (e) {
    gridData = null;
    $("grid-out").textContent = String(e);
  }
  drawGrid();
}

function runPpl() {
  try {
    const r = JSON.parse(describe_ppl($("ppl").value));
    $("ppl-out").textContent = JSON.stringify(r, null, 1);
  } catch (e) {
    $("ppl-out").textContent = String(e);
  }
}

await init();
$("run-shape").onclick = runShape;
$("show-level").oninput = drawShape;
$("grid-kind").onchange = runGrid;
$("grid-prefix").oninput = drawGrid;
$("run-ppl").onclick = runPpl;
runShape();
runGrid();
runPpl();
