import init, { Demo, layout, sample_pages } from "./pkg/ragforge_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const SAMPLES = ["abs_service_manual", "cooling_system", "crowd_counting_page"];
let demo = null;
let demoChunk = null;

function fail(el, err) {
  el.innerHTML = "";
  const p = document.createElement("p");
  p.className = "err";
  p.textContent = String(err);
  el.append(p);
}

function list(el, docs, field = "score") {
  el.innerHTML = "";
  for (const d of docs) {
    const li = document.createElement("li");
    const score = d[field] ?? d.score;
    const head = document.createElement("div");
    head.className = "id";
    head.textContent = `${d.chunk_id}  ${score.toFixed(4)}`;
    const body = document.createElement("div");
    body.textContent = d.text.length > 140 ? d.text.slice(0, 140) + "…" : d.text;
    li.append(head, body);
    el.append(li);
  }
}

function convert() {
  try {
    const out = layout($("pages").value);
    $("markdown").textContent = out.markdown;
    const cols = $("columns");
    cols.innerHTML = "";
    for (const p of out.pages) {
      const div = document.createElement("div");
      div.innerHTML = `<h3>Page ${p.page_no}: split at x = ${p.mid ?? "n/a"}, ${p.tables} table(s)</h3>`;
      const row = document.createElement("div");
      row.className = "row";
      for (const [name, items] of [["Left", p.left], ["Right", p.right]]) {
        const col = document.createElement("div");
        const ol = document.createElement("ol");
        for (const t of items) {
          const li = document.createElement("li");
          li.textContent = t;
          ol.append(li);
        }
        col.innerHTML = `<strong>${name}</strong>`;
        col.append(ol);
        row.append(col);
      }
      div.append(row);
      cols.append(div);
    }
  } catch (e) {
    fail($("columns"), e);
    $("markdown").textContent = "";
  }
}

function config() {
  const w = Number($("w").value);
  return JSON.stringify({
    weights: [w, 1 - w],
    rrf_k: Number($("rrfk").value),
    bm25: { k1: Number($("k1").value), b: Number($("b").value) },
    redundancy_threshold: Number($("thr").value),
    rerank_top_n: Number($("topn").value),
  });
}

function corpus() {
  const size = Number($("chunk").value);
  if (!demo || demoChunk !== size) {
    demo?.free();
    demo = new Demo(size, Math.floor(size / 5));
    demoChunk = size;
    $("status").textContent = `${demo.chunks} chunks from ${SAMPLES.length} sample documents.`;
  }
  return demo;
}

function search() {
  try {
    const out = corpus().search($("query").value, config());
    list($("bm25"), out.bm25);
    list($("vector"), out.vector);
    list($("fused"), out.fused);
  } catch (e) {
    fail($("fused"), e);
  }
}

function compress() {
  try {
    const out = corpus().compress($("query").value, config());
    list($("filtered"), out.filtered);
    list($("reranked"), out.reranked, "relevance_score");
    list($("reordered"), out.reordered, "relevance_score");
  } catch (e) {
    fail($("reordered"), e);
  }
}

await init();
for (const name of SAMPLES) {
  const opt = document.createElement("option");
  opt.value = opt.textContent = name;
  $("sample").append(opt);
}
$("sample").value = "crowd_counting_page";
const loadSample = () => {
  $("pages").value = sample_pages($("sample").value);
  convert();
};
$("sample").addEventListener("change", loadSample);
$("convert").addEventListener("click", convert);
$("search").addEventListener("click", search);
$("compress").addEventListener("click", compress);
$("w").addEventListener("input", () => {
  $("wv").textContent = Number($("w").value).toFixed(2);
  search();
});
$("query").addEventListener("keydown", (e) => e.key === "Enter" && search());
loadSample();
search();
compress();
