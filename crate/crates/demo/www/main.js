import init, { compare_systems, depth_sweep, latency_histogram } from "./pkg/hmcsim_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function params() {
  return [$("pattern").value, num("count"), num("footprint"), num("seed")];
}

function guard(fn) {
  return () => {
    $("status").textContent = "";
    try {
      fn();
    } catch (e) {
      $("status").textContent = String(e.message ?? e);
    }
  };
}

function clear(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = "12px system-ui, sans-serif";
  return ctx;
}

// Horizontal bars, one per label.
function bars(canvas, labels, values, unit) {
  const ctx = clear(canvas);
  const max = Math.max(...values, 1e-9);
  const rowH = canvas.height / labels.length;
  labels.forEach((label, i) => {
    const y = i * rowH;
    const w = ((canvas.width - 260) * values[i]) / max;
    ctx.fillStyle = "#333";
    ctx.fillText(label, 4, y + rowH / 2 + 4);
    ctx.fillStyle = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"][i % 6];
    ctx.fillRect(130, y + 4, w, rowH - 8);
    ctx.fillStyle = "#333";
    ctx.fillText(`${values[i].toFixed(2)} ${unit}`, 136 + w, y + rowH / 2 + 4);
  });
}

// Line plot of several series sharing one x axis; each series is scaled to its own max.
function lines(canvas, xs, series) {
  const ctx = clear(canvas);
  const pad = 40;
  const W = canvas.width - 2 * pad;
  const H = canvas.height - 2 * pad;
  const xAt = (i) => pad + (xs.length > 1 ? (W * i) / (xs.length - 1) : W / 2);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, W, H);
  ctx.fillStyle = "#333";
  xs.forEach((x, i) => ctx.fillText(String(x), xAt(i) - 3, pad + H + 16));
  ctx.fillText("depth", pad + W / 2 - 15, pad + H + 32);
  series.forEach(({ name, values, color }, k) => {
    const max = Math.max(...values.map((v) => v ?? 0), 1e-9);
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    values.forEach((v, i) => {
      const y = pad + H - (H * (v ?? 0)) / max;
      if (i === 0) ctx.moveTo(xAt(i), y);
      else ctx.lineTo(xAt(i), y);
    });
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(`${name} (max ${max.toFixed(3)})`, pad + 8 + k * 220, pad - 10);
  });
}

const fmt = (v) => (v === null || v === undefined ? "n/a" : v.toFixed(4));

function runCompare() {
  const rows = JSON.parse(compare_systems(...params()));
  bars($("compare-chart"), rows.map((r) => r.system), rows.map((r) => r.amat), "cycles AMAT");
  const head = "<tr><th>system</th><th>AMAT</th><th>MPKI L1D</th><th>MPKI L2</th><th>MPKI HMC</th>" +
    "<th>HMC coverage</th><th>HMC accuracy</th><th>L1D coverage</th></tr>";
  $("compare-table").innerHTML = head + rows.map((r) =>
    `<tr><td>${r.system}</td><td>${r.amat.toFixed(3)}</td><td>${r.mpki_l1d.toFixed(3)}</td>` +
    `<td>${r.mpki_l2.toFixed(3)}</td><td>${r.mpki_hmc.toFixed(3)}</td><td>${fmt(r.hmc_coverage)}</td>` +
    `<td>${fmt(r.hmc_accuracy)}</td><td>${fmt(r.l1_coverage)}</td></tr>`).join("");
}

function runSweep() {
  const pts = JSON.parse(depth_sweep(...params(), $("system").value, num("max-depth")));
  lines($("sweep-chart"), pts.map((p) => p.depth), [
    { name: "AMAT", values: pts.map((p) => p.amat), color: "#4e79a7" },
    { name: "HMC coverage", values: pts.map((p) => p.hmc_coverage), color: "#59a14f" },
    { name: "HMC accuracy", values: pts.map((p) => p.hmc_accuracy), color: "#e15759" },
  ]);
}

function runHist() {
  const h = JSON.parse(latency_histogram(...params(), $("system").value));
  const total = h.levels.reduce((s, l) => s + l[1], 0) || 1;
  bars($("hist-chart"), h.levels.map((l) => `${l[0]} (${l[2]}c)`),
    h.levels.map((l) => (100 * l[1]) / total), "% of accesses");
}

await init();
$("compare").onclick = guard(runCompare);
$("sweep").onclick = guard(runSweep);
$("hist").onclick = guard(runHist);
guard(runCompare)();
