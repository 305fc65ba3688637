#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "vlt/train.hpp"

namespace {

using nlohmann::json;
using namespace vlt;

Config load_or_default(const std::string& path) {
  return path.empty() ? Config{} : load_config(path);
}

// P6 raster with ground-truth (green) and predicted (red) boxes outlined.
void dump_ppm(const std::string& path, const synth::Image& img,
              const heads::Box& gt, const heads::Box& pred) {
  synth::Image canvas = img;
  auto draw = [&](const heads::Box& b, double r, double g, double bl) {
    const auto x0 = static_cast<std::int64_t>(std::lround(b.x0()));
    const auto x1 = static_cast<std::int64_t>(std::lround(b.x1()));
    const auto y0 = static_cast<std::int64_t>(std::lround(b.y0()));
    const auto y1 = static_cast<std::int64_t>(std::lround(b.y1()));
    auto put = [&](std::int64_t y, std::int64_t x) {
      if (x < 0 || x >= canvas.w || y < 0 || y >= canvas.h) return;
      canvas.at(y, x, 0) = r;
      canvas.at(y, x, 1) = g;
      canvas.at(y, x, 2) = bl;
    };
    for (std::int64_t x = x0; x <= x1; ++x) {
      put(y0, x);
      put(y1, x);
    }
    for (std::int64_t y = y0; y <= y1; ++y) {
      put(y, x0);
      put(y, x1);
    }
  };
  draw(gt, 0.0, 1.0, 0.0);
  draw(pred, 1.0, 0.0, 0.0);
  std::filesystem::create_directories(
      std::filesystem::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << "P6\n" << canvas.w << " " << canvas.h << "\n255\n";
  for (double v : canvas.rgb) {
    const auto byte = static_cast<unsigned char>(
        std::clamp(std::lround(v * 255.0), 0l, 255l));
    out.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

int cmd_train(const std::string& config_path, std::uint64_t seed,
              const std::string& out_path) {
  Config cfg = load_or_default(config_path);
  Rng rng(seed);
  model::ModelParams m = model::init_model(rng, cfg);
  train::TrainResult res = train::train(m, cfg, seed, &std::cout);
  checkpoint::save_checkpoint(out_path, m);
  std::cout << "trained " << res.steps << " steps, final loss "
            << res.last.total << ", checkpoint " << out_path << "\n";
  return 0;
}

int cmd_track(const std::string& ckpt, const std::string& mode_name, bool srf,
              std::uint64_t seq_seed, const std::string& out_path,
              const std::string& dump_dir, const std::string& config_path) {
  Config cfg = load_or_default(config_path);
  Rng rng(0);
  model::ModelParams m = model::init_model(rng, cfg);
  checkpoint::load_checkpoint(ckpt, m);
  const model::Mode mode = model::parse_mode(mode_name);

  synth::SeqSpec spec = synth::make_sequence_spec(seq_seed, cfg);
  tracker::Tracker trk(m, {mode, srf, false});
  trk.init(synth::render_frame(spec, 0),
           mode == model::Mode::Bbox ? std::vector<std::int64_t>{}
                                     : synth::language_ids(spec));
  std::ofstream out(out_path);
  if (!out) throw ConfigError("cannot write " + out_path);
  for (std::int64_t t = 1; t < spec.length; ++t) {
    synth::Frame fr = synth::render_frame(spec, t);
    tracker::TrackRecord rec = trk.step(fr);
    json j = {{"frame", rec.frame},
              {"box", {rec.box.cx, rec.box.cy, rec.box.w, rec.box.h}},
              {"conf", rec.conf},
              {"w_l", rec.w_l},
              {"w_z", rec.w_z},
              {"iou", rec.iou}};
    out << j.dump() << "\n";
    if (!dump_dir.empty())
      dump_ppm(dump_dir + "/frame_" + std::to_string(t) + ".ppm", fr.image,
               fr.gt, rec.box);
  }
  std::cout << "records written to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& split,
             const std::string& report_path, const std::string& config_path) {
  Config cfg = load_or_default(config_path);
  Rng rng(0);
  model::ModelParams m = model::init_model(rng, cfg);
  checkpoint::load_checkpoint(ckpt, m);
  // split name seeds the held-out sequence pool
  std::uint64_t base = 0xE5A1u;
  for (char c : split) base = base * 131 + static_cast<unsigned char>(c);
  json report;
  for (const char* name : {"bbox", "nl", "nl-bbox"}) {
    train::EvalMetrics met =
        train::evaluate(m, cfg, base, model::parse_mode(name), false, false);
    report[name] = {{"mean_iou", met.mean_iou},
                    {"auc", met.auc},
                    {"precision", met.precision},
                    {"ms_per_frame", met.ms_per_frame},
                    {"frames", met.frames}};
    std::cout << name << ": iou " << met.mean_iou << " auc " << met.auc
              << " prec " << met.precision << "\n";
  }
  std::ofstream out(report_path);
  if (!out) throw ConfigError("cannot write " + report_path);
  out << report.dump(2) << "\n";
  return 0;
}

int check(bool ok, const char* name, int& failures) {
  std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "\n";
  if (!ok) ++failures;
  return ok ? 0 : 1;
}

// Quick oracle sweep: one representative check per verified property.
int cmd_selftest() {
  int failures = 0;
  {  // chunked scan == sequential scan
    Rng rng(7);
    ssm::SsmInputs in;
    const std::int64_t n = 24, d = 6, ds = 4;
    in.x = Tensor::randn(rng, {n, d}, 1.0, DType::F64);
    in.delta = add_scalar(sigmoid(Tensor::randn(rng, {n, d}, 1.0, DType::F64)),
                          0.01);
    in.A = neg(exp(Tensor::randn(rng, {d, ds}, 0.3, DType::F64)));
    in.B = Tensor::randn(rng, {n, ds}, 1.0, DType::F64);
    in.C = Tensor::randn(rng, {n, ds}, 1.0, DType::F64);
    in.D = Tensor::randn(rng, {d}, 1.0, DType::F64);
    in.h0 = Tensor::zeros({d, ds}, DType::F64);
    auto a = ssm::scan_sequential(in), b = ssm::scan_chunked(in, 5);
    double diff = 0;
    for (std::int64_t i = 0; i < a.y.size(); ++i)
      diff = std::max(diff, std::abs(a.y.at(i) - b.y.at(i)));
    check(diff < 1e-10, "scan: chunked == sequential", failures);
  }
  {  // gradient check through a small fusion block
    Rng rng(8);
    hmss::HmssParams p = hmss::init_hmss(rng, 4, 8, 2, DType::F64);
    TokenSequence g;
    g.layout = {1, 2, 2};
    g.tokens = Tensor::randn(rng, {5, 4}, 1.0, DType::F64, true);
    hmss::DirectionalStates st{Tensor::zeros({8, 2}, DType::F64),
                               Tensor::zeros({8, 2}, DType::F64)};
    auto loss = [&] {
      auto r = hmss::hmss_forward(g, p, st);
      return sum_all(mul(r.out.tokens, r.out.tokens));
    };
    std::vector<Tensor> leaves = p.tensors();
    leaves.push_back(g.tokens);
    check(finite_diff_check(loss, leaves, 1e-5, 1e-4) < 1e-5,
          "gradients: fusion block finite differences", failures);
  }
  {  // locality attention identity at window 1
    Rng rng(9);
    sle::SleParams p = sle::init_sle(rng, 4, 1, 3, DType::F64);
    Tensor h = Tensor::randn(rng, {6, 4}, 1.0, DType::F64);
    Tensor out = sle::window_linear_attention(h, p);
    Tensor v = matmul(h, p.w_v);
    double diff = 0;
    for (std::int64_t i = 0; i < out.size(); ++i)
      diff = std::max(diff, std::abs(out.at(i) - v.at(i)));
    check(diff < 1e-12, "locality attention: w=1 identity", failures);
  }
  {  // loss closed forms
    Tensor sp = Tensor::scalar(0.3, DType::F64);
    std::vector<Tensor> sn(8, Tensor::scalar(0.3, DType::F64));
    const double lcw = heads::contrastive_loss(sp, sn, 1.0).item();
    check(std::abs(lcw - std::log(9.0)) < 1e-12, "loss: ln(9) closed form",
          failures);
    heads::Box gt{1.5, 1.5, 1.0, 1.0};
    Tensor pred = Tensor::from_data({1, 4}, {0.5, 0.5, 1.0, 1.0}, DType::F64);
    check(std::abs(heads::giou_loss(pred, gt).item() - 1.5) < 1e-12,
          "loss: GIoU touching-corner case", failures);
  }
  {  // synthetic world determinism
    Config cfg;
    synth::SeqSpec a = synth::make_sequence_spec(42, cfg);
    synth::SeqSpec b = synth::make_sequence_spec(42, cfg);
    synth::Frame fa = synth::render_frame(a, 3), fb = synth::render_frame(b, 3);
    check(fa.image.rgb == fb.image.rgb, "world: bit-identical regeneration",
          failures);
  }
  std::cout << (failures == 0 ? "selftest OK" : "selftest FAILED") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vision-language tracker on synthetic sequences"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, mode = "nl-bbox";
  std::string dump_dir, split = "heldout", report_path = "metrics.json";
  std::uint64_t seed = 1, seq_seed = 1;
  bool srf = false;

  auto* t = app.add_subcommand("train", "train a model on generated clips");
  t->add_option("--config", config_path, "key=value config file");
  t->add_option("--seed", seed, "master seed");
  t->add_option("--out", out_path, "checkpoint path")->required();

  auto* tr = app.add_subcommand("track", "run the tracker on one sequence");
  tr->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  tr->add_option("--mode", mode, "bbox|nl|nl-bbox");
  tr->add_flag("--srf", srf, "semi-reference-free from frame 1");
  tr->add_option("--seq-seed", seq_seed, "sequence seed");
  tr->add_option("--out", out_path, "records JSONL path")->required();
  tr->add_option("--dump-ppm", dump_dir, "directory for frame rasters");
  tr->add_option("--config", config_path, "key=value config file");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  ev->add_option("--split", split, "held-out split name");
  ev->add_option("--report", report_path, "metrics JSON path");
  ev->add_option("--config", config_path, "key=value config file");

  app.add_subcommand("selftest", "run the oracle sanity suite");

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("train")) return cmd_train(config_path, seed, out_path);
    if (app.got_subcommand("track"))
      return cmd_track(ckpt_path, mode, srf, seq_seed, out_path, dump_dir,
                       config_path);
    if (app.got_subcommand("eval"))
      return cmd_eval(ckpt_path, split, report_path, config_path);
    if (app.got_subcommand("selftest")) return cmd_selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
