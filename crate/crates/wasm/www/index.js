import init, { heatColor, syntheticCity, temporalSeries } from "./pkg/citypulse_wasm.js";

const $ = (id) => document.getElementById(id);
const MODES = ["snapshot", "aggregated", "windowed"];
const EDGE_WIDTH = { small: 1, medium: 2.5, large: 4.5 };
const state = { mode: 0, city: null, faces: [] };

function rgb(stop) {
  return `rgb(${stop[0]},${stop[1]},${stop[2]})`;
}

function shade(hex, factor) {
  const n = parseInt(hex.slice(1), 16);
  const c = [n >> 16, (n >> 8) & 255, n & 255].map((v) => Math.round(v * factor));
  return `rgb(${c[0]},${c[1]},${c[2]})`;
}

// ---- city ---------------------------------------------------------------

function projector(foundation, canvas) {
  const margin = 30;
  const ky = 0.55;
  const s = Math.min(
    (canvas.width - 2 * margin) / foundation.width,
    (canvas.height - 2 * margin) / (foundation.depth * ky + 8),
  );
  const ox = margin - foundation.x * s;
  const oy = canvas.height - margin - (foundation.z + foundation.depth) * s * ky;
  return { s, ky, p: (x, y, z) => [ox + x * s, oy + z * s * ky - y * s * 0.9] };
}

function drawBox(ctx, proj, b, fill, alpha) {
  const { s, ky, p } = proj;
  const top = b.yBase + b.height;
  const [x0, yt] = p(b.x, top, b.z);
  const [, yf] = p(b.x, top, b.z + b.depth);
  const [, yb] = p(b.x, b.yBase, b.z + b.depth);
  ctx.globalAlpha = alpha;
  ctx.fillStyle = shade(fill, 0.75);
  ctx.fillRect(x0, yf, b.width * s, yb - yf);
  ctx.fillStyle = fill;
  ctx.fillRect(x0, yt, b.width * s, b.depth * s * ky);
  ctx.strokeStyle = "#0006";
  ctx.lineWidth = 0.5;
  ctx.strokeRect(x0, yt, b.width * s, b.depth * s * ky);
  ctx.globalAlpha = 1;
  return { box: b, x: x0, y: yt, w: b.width * s, h: yb - yt };
}

function renderCity() {
  const canvas = $("city");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const city = state.city;
  if (!city) return;
  const boxes = city.snapshot.geometry.boxes;
  const foundation = boxes.find((b) => b.kind === "foundation");
  const proj = projector(foundation, canvas);
  const heatOn = $("heat").checked;
  const alpha = heatOn ? 0.4 : 1;
  const foundationTop = foundation.yBase + foundation.height;

  state.faces = [drawBox(ctx, proj, foundation, "#7a8a99", 1)];

  if (heatOn) {
    const footprint = Math.min(...boxes.filter((b) => b.kind === "class").map((b) => b.width));
    const radius = 1.5 * footprint * proj.s;
    ctx.save();
    ctx.globalCompositeOperation = "source-over";
    for (const a of city.snapshot.geometry.anchors) {
      const color = city.colors[a.classId];
      if (!color) continue;
      const [cx, cy] = proj.p(a.x, foundationTop, a.z);
      const g = ctx.createRadialGradient(cx, cy, 0, cx, cy, radius);
      g.addColorStop(0, color);
      g.addColorStop(1, color + "00");
      ctx.fillStyle = g;
      ctx.beginPath();
      ctx.ellipse(cx, cy, radius, radius * proj.ky, 0, 0, 2 * Math.PI);
      ctx.fill();
    }
    ctx.restore();
  }

  const rest = boxes
    .filter((b) => b.kind !== "foundation")
    .sort((a, b) => a.yBase - b.yBase || a.z + a.depth - (b.z + b.depth) || a.x - b.x);
  for (const b of rest) {
    const fill = b.kind === "package" ? (b.yBase > 0.5 ? "#9fb86f" : "#7fa35a") : "#5a7fc4";
    state.faces.push(drawBox(ctx, proj, b, fill, alpha));
    if (heatOn && b.kind === "class" && city.colors[b.nodeId]) {
      const [cx, cy] = proj.p(b.x + b.width / 2, b.yBase, b.z + b.depth / 2);
      const [, sy] = proj.p(0, foundationTop, b.z + b.depth / 2);
      ctx.strokeStyle = "#000";
      ctx.lineWidth = 1;
      ctx.beginPath();
      ctx.moveTo(cx, cy);
      ctx.lineTo(cx, sy);
      ctx.stroke();
    }
  }

  const byId = new Map(boxes.map((b) => [b.nodeId, b]));
  ctx.strokeStyle = "#ff8c00";
  for (const e of city.snapshot.edges) {
    const a = byId.get(e.callerClassId);
    const b = byId.get(e.calleeClassId);
    if (!a || !b || a === b) continue;
    const pa = proj.p(a.x + a.width / 2, a.yBase + a.height, a.z + a.depth / 2);
    const pb = proj.p(b.x + b.width / 2, b.yBase + b.height, b.z + b.depth / 2);
    ctx.lineWidth = EDGE_WIDTH[e.thicknessClass] ?? 1;
    ctx.globalAlpha = 0.8;
    ctx.beginPath();
    ctx.moveTo(...pa);
    ctx.quadraticCurveTo((pa[0] + pb[0]) / 2, Math.min(pa[1], pb[1]) - 40, ...pb);
    ctx.stroke();
  }
  ctx.globalAlpha = 1;
  renderLegend();
}

function renderLegend() {
  const view = state.city.heatmap;
  $("mode").textContent = MODES[state.mode];
  $("lmin").textContent = view.legendMin.toFixed(2);
  $("lmax").textContent = view.legendMax.toFixed(2);
  $("bar").style.background = `linear-gradient(to right, ${view.gradientStops.map(rgb).join(", ")})`;
}

function loadCity() {
  try {
    const json = syntheticCity(
      Number($("classes").value),
      Number($("cps").value),
      Number($("ticks").value),
      Number($("seed").value),
      $("metric").value,
      MODES[state.mode],
    );
    state.city = JSON.parse(json);
    $("city-error").textContent = "";
  } catch (e) {
    $("city-error").textContent = String(e.message ?? e);
  }
  renderCity();
}

function hover(ev) {
  const popup = $("popup");
  const rect = $("city").getBoundingClientRect();
  const x = ev.clientX - rect.left;
  const y = ev.clientY - rect.top;
  const hit = [...state.faces].reverse().find((f) => f.box.kind === "class" && x >= f.x && x <= f.x + f.w && y >= f.y && y <= f.y + f.h);
  if (!hit || !state.city) {
    popup.style.display = "none";
    return;
  }
  const id = hit.box.nodeId;
  const scores = state.city.snapshot.metricScores;
  const lines = [hit.box.label];
  for (const metric of Object.keys(scores)) {
    lines.push(`${metric}: ${scores[metric].values[id] ?? 0}`);
  }
  const heat = state.city.heatmap.values[id];
  if (heat !== undefined) lines.push(`${MODES[state.mode]} heat: ${heat.toFixed(2)}`);
  popup.textContent = lines.join("\n");
  popup.style.left = `${ev.clientX + 12}px`;
  popup.style.top = `${ev.clientY + 12}px`;
  popup.style.display = "block";
}

// ---- color probe --------------------------------------------------------

function probe() {
  const min = Number($("cmin").value);
  const max = Number($("cmax").value);
  const value = min + ((max - min) * Number($("cval").value)) / 1000;
  try {
    const hex = heatColor(value, min, max);
    $("swatch").style.background = hex;
    $("ctext").textContent = `${value.toFixed(2)} -> ${hex}`;
  } catch (e) {
    $("ctext").textContent = String(e.message ?? e);
  }
}

// ---- temporal modes -----------------------------------------------------

const SERIES_COLORS = { snapshot: "#4aa3ff", aggregated: "#ffb340", windowed: "#ff5f7a" };

function series() {
  const canvas = $("series");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let data;
  try {
    data = JSON.parse(temporalSeries($("raw").value, Number($("w").value), Number($("decay").value)));
    $("series-error").textContent = "";
  } catch (e) {
    $("series-error").textContent = String(e.message ?? e);
    return;
  }
  const all = Object.values(data).flat();
  if (all.length === 0) return;
  const lo = Math.min(0, ...all);
  const hi = Math.max(1, ...all);
  const n = data.snapshot.length;
  const px = (i) => 20 + (i * (canvas.width - 30)) / Math.max(1, n - 1);
  const py = (v) => canvas.height - 15 - ((v - lo) * (canvas.height - 25)) / (hi - lo);
  ctx.strokeStyle = "#999";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(20, py(0));
  ctx.lineTo(canvas.width - 10, py(0));
  ctx.stroke();
  for (const [name, values] of Object.entries(data)) {
    ctx.strokeStyle = SERIES_COLORS[name];
    ctx.lineWidth = 2;
    ctx.beginPath();
    values.forEach((v, i) => (i ? ctx.lineTo(px(i), py(v)) : ctx.moveTo(px(i), py(v))));
    ctx.stroke();
  }
  $("series-key").innerHTML = Object.entries(data)
    .map(([name, v]) => `<span style="color:${SERIES_COLORS[name]}">${name}</span> ${v.at(-1)?.toFixed(3) ?? ""}`)
    .join(" &nbsp; ");
}

// ---- wiring -------------------------------------------------------------

await init();
for (const id of ["classes", "cps", "ticks", "seed", "metric"]) $(id).addEventListener("change", loadCity);
$("heat").addEventListener("change", renderCity);
$("prev").addEventListener("click", () => {
  state.mode = (state.mode + MODES.length - 1) % MODES.length;
  loadCity();
});
$("next").addEventListener("click", () => {
  state.mode = (state.mode + 1) % MODES.length;
  loadCity();
});
$("city").addEventListener("mousemove", hover);
$("city").addEventListener("mouseleave", () => ($("popup").style.display = "none"));
for (const id of ["cmin", "cmax", "cval"]) $(id).addEventListener("input", probe);
for (const id of ["raw", "w", "decay"]) $(id).addEventListener("input", series);
loadCity();
probe();
series();
