#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "vlt/checkpoint.hpp"
#include "vlt/sle.hpp"
#include "vlt/train.hpp"

namespace py = pybind11;
using namespace vlt;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style |
                                               py::array::forcecast>& a) {
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(data), DType::F64);
}

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  const std::vector<double>& d = t.data();
  std::copy(d.begin(), d.end(), out.mutable_data());
  return out;
}

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

// High-level handle bundling config, parameters and checkpoint I/O.
struct Model {
  model::ModelParams params;

  Model(const std::string& config_text, std::uint64_t seed) {
    Config cfg = parse_config_text(config_text);
    Rng rng(seed);
    params = model::init_model(rng, cfg);
  }

  py::dict train(std::uint64_t seed, bool verbose) {
    std::ostringstream log;
    train::TrainResult r =
        train::train(params, params.cfg, seed, verbose ? &log : nullptr);
    py::dict out;
    out["steps"] = r.steps;
    out["final_loss"] = r.last.total;
    out["loss_history"] = r.loss_history;
    if (verbose) out["log"] = log.str();
    return out;
  }

  py::dict evaluate(std::uint64_t seed_base, const std::string& mode, bool srf,
                    bool srf_reset_memory) {
    train::EvalMetrics e =
        train::evaluate(params, params.cfg, seed_base, model::parse_mode(mode),
                        srf, srf_reset_memory);
    py::dict out;
    out["mean_iou"] = e.mean_iou;
    out["auc"] = e.auc;
    out["precision"] = e.precision;
    out["ms_per_frame"] = e.ms_per_frame;
    out["frames"] = e.frames;
    return out;
  }

  py::list track(std::uint64_t seq_seed, const std::string& mode, bool srf) {
    synth::SeqSpec spec = synth::make_sequence_spec(seq_seed, params.cfg);
    tracker::TrackerOptions opt;
    opt.mode = model::parse_mode(mode);
    opt.srf = srf;
    tracker::Tracker tr(params, opt);
    tr.init(synth::render_frame(spec, 0), synth::language_ids(spec));
    py::list out;
    for (std::int64_t t = 1; t < spec.length; ++t) {
      tracker::TrackRecord r = tr.step(synth::render_frame(spec, t));
      py::dict rec;
      rec["frame"] = r.frame;
      rec["box"] = py::make_tuple(r.box.cx, r.box.cy, r.box.w, r.box.h);
      rec["conf"] = r.conf;
      rec["w_l"] = r.w_l;
      rec["w_z"] = r.w_z;
      rec["iou"] = r.iou;
      out.append(rec);
    }
    return out;
  }

  void save(const std::string& path) {
    checkpoint::save_checkpoint(path, params);
  }
  void load(const std::string& path) {
    checkpoint::load_checkpoint(path, params);
  }
};

}  // namespace

PYBIND11_MODULE(_mambavlt, m) {
  m.doc() =
      "Time-evolving multimodal tracker: selective-scan kernels and the "
      "synthetic training/evaluation harness.";

  m.def(
      "selective_scan",
      [](const Arr& x, const Arr& delta, const Arr& A, const Arr& B,
         const Arr& C, const Arr& D, const Arr& h0, std::int64_t chunk) {
        ssm::SsmInputs inp{to_tensor(x), to_tensor(delta), to_tensor(A),
                           to_tensor(B), to_tensor(C), to_tensor(D),
                           to_tensor(h0)};
        ssm::ScanResult r = chunk > 0 ? ssm::scan_chunked(inp, chunk)
                                      : ssm::scan_sequential(inp);
        return py::make_tuple(to_numpy(r.y), to_numpy(r.h_final));
      },
      py::arg("x"), py::arg("delta"), py::arg("A"), py::arg("B"), py::arg("C"),
      py::arg("D"), py::arg("h0"), py::arg("chunk") = 0,
      "Selective state-space scan; chunk=0 selects the sequential kernel.");

  m.def(
      "discretize",
      [](const Arr& A, const Arr& B, const Arr& delta, bool zoh_exact) {
        auto [abar, bbar] =
            ssm::discretize(to_tensor(A), to_tensor(B), to_tensor(delta),
                            zoh_exact);
        return py::make_tuple(to_numpy(abar), to_numpy(bbar));
      },
      py::arg("A"), py::arg("B"), py::arg("delta"),
      py::arg("zoh_exact") = false);

  m.def(
      "window_attention",
      [](const Arr& h, const Arr& w_q, const Arr& w_k, const Arr& w_v,
         std::int64_t window) {
        Rng rng(0);
        Tensor ht = to_tensor(h);
        sle::SleParams p =
            sle::init_sle(rng, ht.dim(1), window, 3, DType::F64);
        p.w_q = to_tensor(w_q);
        p.w_k = to_tensor(w_k);
        p.w_v = to_tensor(w_v);
        return to_numpy(sle::window_linear_attention(ht, p));
      },
      py::arg("h"), py::arg("w_q"), py::arg("w_k"), py::arg("w_v"),
      py::arg("window"),
      "Causal sliding-window linear attention over the token axis.");

  m.def(
      "render_frame",
      [](std::uint64_t seq_seed, std::int64_t t, const std::string& cfg_text) {
        Config cfg = parse_config_text(cfg_text);
        synth::SeqSpec spec = synth::make_sequence_spec(seq_seed, cfg);
        synth::Frame f = synth::render_frame(spec, t);
        std::vector<py::ssize_t> shape{f.image.h, f.image.w, 3};
        py::array_t<double> img(shape);
        std::copy(f.image.rgb.begin(), f.image.rgb.end(), img.mutable_data());
        return py::make_tuple(
            img, py::make_tuple(f.gt.cx, f.gt.cy, f.gt.w, f.gt.h),
            synth::language_ids(spec));
      },
      py::arg("seq_seed"), py::arg("t"), py::arg("config_text") = "");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&, std::uint64_t>(),
           py::arg("config_text") = "", py::arg("seed") = 0)
      .def("train", &Model::train, py::arg("seed") = 0,
           py::arg("verbose") = false)
      .def("evaluate", &Model::evaluate, py::arg("seed_base"),
           py::arg("mode") = "nl-bbox", py::arg("srf") = false,
           py::arg("srf_reset_memory") = false)
      .def("track", &Model::track, py::arg("seq_seed"),
           py::arg("mode") = "nl-bbox", py::arg("srf") = false)
      .def("save", &Model::save, py::arg("path"))
      .def("load", &Model::load, py::arg("path"));
}
