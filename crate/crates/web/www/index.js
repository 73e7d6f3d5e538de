import init, { RegistrationDemo, fill_holes_2d, verify_shape_tables, builtin_tables_json } from "./pkg/voxelforge_web.js";

const $ = (id) => document.getElementById(id);

function paint(canvas, rgba, edge) {
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), edge, edge), 0, 0);
}

function plot(canvas, values) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  if (values.length < 2) return;
  const lo = Math.min(...values), hi = Math.max(...values);
  const y = (v) => height - 8 - ((v - lo) / (hi - lo || 1)) * (height - 16);
  ctx.beginPath();
  values.forEach((v, n) => {
    const x = 8 + (n / (values.length - 1)) * (width - 16);
    n === 0 ? ctx.moveTo(x, y(v)) : ctx.lineTo(x, y(v));
  });
  ctx.strokeStyle = "#336";
  ctx.stroke();
}

const fmt = (xs) => Array.from(xs, (v) => v.toFixed(2).padStart(7)).join("");

function registerDemo() {
  const shift = Number($("shift").value), angle = Number($("angle").value);
  $("reg-out").textContent = "registering...";
  // let the status paint before the synchronous call
  setTimeout(() => {
    const t0 = performance.now();
    const demo = new RegistrationDemo(shift, angle, Number($("seed").value));
    const ms = performance.now() - t0;
    const edge = demo.edge();
    paint($("before"), demo.before_rgba(), edge);
    paint($("after"), demo.after_rgba(), edge);
    plot($("trace"), Array.from(demo.mi_trace()));
    const [dt, da] = demo.error();
    $("reg-out").textContent =
      "            rx     ry     rz     tx     ty     tz\n" +
      `truth  ${fmt(demo.truth())}\nfound  ${fmt(demo.found())}\n\n` +
      `residual ${dt.toFixed(3)} mm, ${da.toFixed(3)} deg in ${ms.toFixed(0)} ms`;
    demo.free();
  }, 10);
}

const EDGE = 48;
let mask = new Uint8Array(EDGE * EDGE);

function drawMask(filled) {
  const img = new Uint8ClampedArray(EDGE * EDGE * 4);
  for (let n = 0; n < mask.length; n++) {
    const color = mask[n] ? [40, 40, 40] : filled && filled[n] ? [230, 120, 40] : [255, 255, 255];
    img.set([...color, 255], n * 4);
  }
  $("mask").getContext("2d").putImageData(new ImageData(img, EDGE, EDGE), 0, 0);
}

function setupMask() {
  const canvas = $("mask");
  let down = false;
  const stroke = (e) => {
    const r = canvas.getBoundingClientRect();
    const i = Math.floor(((e.clientX - r.left) / r.width) * EDGE);
    const j = Math.floor(((e.clientY - r.top) / r.height) * EDGE);
    if (i < 0 || j < 0 || i >= EDGE || j >= EDGE) return;
    mask[j * EDGE + i] = e.shiftKey ? 0 : 1;
    drawMask(null);
  };
  canvas.addEventListener("pointerdown", (e) => { down = true; stroke(e); });
  canvas.addEventListener("pointermove", (e) => down && stroke(e));
  window.addEventListener("pointerup", () => { down = false; });
  $("fill").onclick = () => {
    const filled = fill_holes_2d(mask, EDGE, EDGE);
    const added = filled.reduce((s, v, n) => s + (v && !mask[n] ? 1 : 0), 0);
    drawMask(filled);
    $("fill-out").textContent = `${added} cells filled`;
  };
  $("clear").onclick = () => { mask = new Uint8Array(EDGE * EDGE); drawMask(null); $("fill-out").textContent = ""; };
  drawMask(null);
}

function verify() {
  try {
    $("shape-out").textContent = verify_shape_tables($("tables").value);
  } catch (e) {
    $("shape-out").textContent = `error: ${e.message ?? e}`;
  }
}

await init();
for (const id of ["shift", "angle"]) {
  const show = () => { $(`${id}-v`).textContent = $(id).value; };
  $(id).addEventListener("input", show);
  show();
}
$("register").onclick = registerDemo;
setupMask();
$("tables").value = builtin_tables_json();
$("verify").onclick = verify;
verify();
