// Slider panel driving /api/render, with presets and encoder suggestions.
const state = { renderer: "lipstick", specs: [], values: {}, sceneId: null, seq: 0, shown: 0, timer: null };
const $ = (id) => document.getElementById(id);

function banner(text) {
  $("banner").textContent = text || "";
}

function upper(spec) {
  return spec.high === null ? spec.clamp_high_for_norm : spec.high;
}

async function loadRenderer(id) {
  state.renderer = id;
  try {
    const schema = await (await fetch(`/api/schema/${id}`)).json();
    state.specs = schema.specs;
    const presets = await (await fetch(`/api/presets/${id}`)).json();
    $("presets").replaceChildren(...presets.map((p, i) => new Option(p.name, i)));
    $("presets").onchange = () => setValues(presets[$("presets").value].params);
    buildSliders();
    setValues(presets[0].params);
    banner("");
  } catch (e) {
    banner(`service unreachable: ${e}`);
  }
}

function buildSliders() {
  const box = $("sliders");
  box.replaceChildren();
  for (const s of state.specs) {
    const row = document.createElement("label");
    const input = document.createElement("input");
    Object.assign(input, { type: "range", min: s.low, max: upper(s), step: (upper(s) - s.low) / 1000, id: `p-${s.name}` });
    const out = document.createElement("output");
    input.oninput = () => {
      state.values[s.name] = Number(input.value);
      out.textContent = input.value;
      schedule();
    };
    row.append(`${s.name} [${s.low}, ${upper(s)}] `, input, out);
    box.append(row);
  }
}

function setValues(params) {
  for (const s of state.specs) {
    const v = params[s.name];
    state.values[s.name] = v;
    const input = $(`p-${s.name}`);
    input.value = v;
    input.nextSibling.textContent = v;
  }
  schedule();
}

function schedule() {
  clearTimeout(state.timer);
  state.timer = setTimeout(render, 150);
}

async function render() {
  if (!state.sceneId) return;
  const seq = ++state.seq;
  const res = await fetch("/api/render", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ scene_id: state.sceneId, renderer_id: state.renderer, params: state.values }),
  });
  if (seq < state.shown) return;
  state.shown = seq;
  if (!res.ok) {
    banner((await res.json()).error);
    return;
  }
  $("out").src = URL.createObjectURL(await res.blob());
  banner("");
}

$("send").onclick = async () => {
  const form = new FormData();
  for (const f of ["image", "lip_mask", "hair_mask"]) {
    if ($(f).files[0]) form.append(f, $(f).files[0]);
  }
  const res = await fetch("/api/scenes", { method: "POST", body: form });
  const body = await res.json();
  if (!res.ok) return banner(body.error);
  state.sceneId = body.scene_id;
  schedule();
};

$("suggest").onclick = async () => {
  if (!state.sceneId) return banner("upload a scene first");
  const res = await fetch("/api/encode", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ renderer_id: state.renderer, scene_ids: [state.sceneId] }),
  });
  const body = await res.json();
  if (!res.ok) return banner(body.error);
  setValues(body.params);
};

$("renderer").onchange = () => loadRenderer($("renderer").value);
loadRenderer("lipstick");
