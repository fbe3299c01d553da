// semflow: command-line surface for the semantic-flow pipeline.
// Subcommands: match, train, eval, synth, sweep. Config values layer as
// built-in defaults < --config JSON file < explicit flags. Exit codes:
// 0 ok, 2 format error, 3 shape error, 4 numeric error.

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "semflow/errors.hpp"
#include "semflow/eval.hpp"
#include "semflow/features.hpp"
#include "semflow/grid.hpp"
#include "semflow/image.hpp"
#include "semflow/losses.hpp"
#include "semflow/matching.hpp"
#include "semflow/synth.hpp"

namespace {

using namespace semflow;
using nlohmann::json;

// ---------------------------------------------------------------------
// Config layering

class Layered {
public:
  explicit Layered(CLI::App* sub) : sub_(sub) {
    sub->add_option("--config", config_path_,
                    "JSON config file; explicit flags override its keys");
  }

  template <typename T>
  CLI::Option* add(const std::string& name, T& ref, const std::string& desc) {
    setters_[name] = [&ref](const json& v) { ref = v.get<T>(); };
    return sub_->add_option("--" + name, ref, desc)->capture_default_str();
  }

  CLI::Option* flag(const std::string& name, bool& ref, const std::string& desc) {
    setters_[name] = [&ref](const json& v) { ref = v.get<bool>(); };
    return sub_->add_flag("--" + name, ref, desc);
  }

  // Called after parsing: fills in config-file values wherever the flag
  // was not given on the command line. Unknown keys are rejected.
  void apply_config() const {
    if (config_path_.empty()) return;
    std::ifstream is(config_path_);
    if (!is) throw FormatError(config_path_ + ": cannot open");
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw FormatError(config_path_ + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(config_path_ + ": config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      const auto it = setters_.find(key);
      if (it == setters_.end()) throw FormatError(config_path_ + ": unknown key: " + key);
      const CLI::Option* opt = sub_->get_option_no_throw("--" + key);
      if (opt && opt->count() > 0) continue;
      try {
        it->second(value);
      } catch (const json::exception&) {
        throw FormatError(config_path_ + ": bad value for key: " + key);
      }
    }
  }

private:
  CLI::App* sub_;
  std::string config_path_;
  std::map<std::string, std::function<void(const json&)>> setters_;
};

// ---------------------------------------------------------------------
// Shared plumbing

MatchMode parse_mode(const std::string& s) {
  if (s == "discrete") return MatchMode::discrete;
  if (s == "soft") return MatchMode::soft;
  if (s == "kernel_soft") return MatchMode::kernel_soft;
  throw FormatError("unknown mode: " + s + " (expected discrete, soft or kernel_soft)");
}

Normalization parse_norm(const std::string& s) {
  if (s == "img") return Normalization::img;
  if (s == "bbox") return Normalization::bbox;
  throw FormatError("unknown normalization: " + s + " (expected img or bbox)");
}

struct ModelOpts {
  std::string checkpoint;
  std::size_t working = 20;
  std::size_t dim = 16;
  std::uint64_t extractor_seed = 17;
  std::uint64_t weight_seed = 7;
};

void add_model_opts(Layered& L, ModelOpts& m, bool with_checkpoint = true) {
  if (with_checkpoint)
    L.add("checkpoint", m.checkpoint,
          "checkpoint prefix for adaptation weights (identity-initialized when absent)");
  L.add("working", m.working, "working grid size (cells per side)");
  L.add("dim", m.dim, "feature dimension");
  L.add("extractor-seed", m.extractor_seed, "frozen extractor seed");
  L.add("weight-seed", m.weight_seed, "adaptation weight init seed");
}

TrainedModel resolve_model(const ModelOpts& m) {
  if (!m.checkpoint.empty()) return load_checkpoint(m.checkpoint).model;
  ToyExtractor e;
  e.working_h = m.working;
  e.working_w = m.working;
  e.d = m.dim;
  e.seed = m.extractor_seed;
  return TrainedModel::init(e, m.weight_seed);
}

struct MatchOpts {
  double beta = 50.0;
  double sigma = 5.0;
  std::string mode = "kernel_soft";
};

void add_match_opts(Layered& L, MatchOpts& m) {
  L.add("beta", m.beta, "softmax inverse temperature");
  L.add("sigma", m.sigma, "argmax kernel width in grid cells");
  L.add("mode", m.mode, "argmax mode")
      ->check(CLI::IsMember({"discrete", "soft", "kernel_soft"}));
}

MatchConfig to_match_config(const MatchOpts& m) {
  MatchConfig cfg;
  cfg.beta = m.beta;
  cfg.sigma = m.sigma;
  cfg.mode = parse_mode(m.mode);
  return cfg;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::vector<std::vector<std::string>> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError(path + ": cannot open");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    rows.push_back(split_csv(line));
  }
  return rows;
}

ScalarGrid mask_grid(const Mask& m) {
  ScalarGrid g(m.h, m.w);
  g.values = m.values;
  return g;
}

std::vector<FeatureMap> adapted_levels(const TrainedModel& model, const Image& img) {
  const auto [f1, f2] = extract_toy(img, model.extractor);
  return {adapt(f1, model.level1), adapt(f2, model.level2)};
}

std::string raster_ext(const Image& img) { return img.channels == 3 ? ".ppm" : ".pgm"; }

// ---------------------------------------------------------------------
// match

struct MatchArgs {
  std::vector<std::string> src, tgt;
  std::string out_fs, out_ft;
  MatchOpts match;
  ModelOpts model;
  bool warp = false;
  std::string src_mask_path, out_warped_mask, out_warped_image;
};

int run_match(const MatchArgs& a) {
  const MatchConfig cfg = to_match_config(a.match);
  std::vector<FeatureMap> S, T;
  Image src_img, tgt_img;
  const bool from_images = !a.src.front().ends_with(".sfnf");

  if (from_images) {
    if (a.src.size() != 1 || a.tgt.size() != 1)
      throw FormatError("match: image inputs take exactly one path per side");
    src_img = load_image(a.src.front());
    tgt_img = load_image(a.tgt.front());
    const TrainedModel model = resolve_model(a.model);
    S = adapted_levels(model, src_img);
    T = adapted_levels(model, tgt_img);
  } else {
    for (const std::string& p : a.src) S.push_back(load_feature_map(p));
    for (const std::string& p : a.tgt) T.push_back(load_feature_map(p));
  }

  const auto [Fs, Ft] = match(S, T, cfg);
  save_flow(Fs, a.out_fs);
  save_flow(Ft, a.out_ft);
  std::cout << "wrote " << a.out_fs << " and " << a.out_ft << "\n";

  if (a.warp) {
    if (!a.src_mask_path.empty() && !a.out_warped_mask.empty()) {
      // The source mask rides the target-grid flow into the target frame.
      const Mask m = resample_mask(load_mask(a.src_mask_path), Ft.h, Ft.w);
      const ScalarGrid warped = warp_scalar(mask_grid(m), Ft);
      Mask out(Ft.h, Ft.w);
      out.values = warped.values;
      save_mask(a.out_warped_mask, out);
      std::cout << "wrote " << a.out_warped_mask << "\n";
    }
    if (!a.out_warped_image.empty()) {
      if (!from_images)
        throw FormatError("match: --out-warped-image needs image inputs");
      const FlowField fpix = upsample_flow(Ft, tgt_img.h, tgt_img.w);
      Image out = tgt_img;
      ScalarGrid ch(src_img.h, src_img.w);
      for (std::size_t c = 0; c < src_img.channels; ++c) {
        for (std::size_t y = 0; y < src_img.h; ++y)
          for (std::size_t x = 0; x < src_img.w; ++x) ch.at(y, x) = src_img.at(y, x, c);
        const ScalarGrid warped = warp_scalar(ch, fpix);
        for (std::size_t y = 0; y < out.h; ++y)
          for (std::size_t x = 0; x < out.w; ++x) out.at(y, x, c) = warped.at(y, x);
      }
      save_image(a.out_warped_image, out);
      std::cout << "wrote " << a.out_warped_image << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------
// train

struct TrainArgs {
  std::string corpus;
  std::size_t procedural = 0;
  std::size_t height = 320, width = 320;
  std::uint64_t corpus_seed = 99;
  std::size_t batch = 16, epochs = 40, lr_drop_epoch = 30;
  double lr = 3e-5, lr_drop_factor = 5.0;
  double adam_beta1 = 0.9, adam_beta2 = 0.999;
  std::uint64_t seed = 1;
  double rotation = 15.0, scale_lo = 0.85, scale_hi = 1.15, translation = 0.10, shear = 0.1;
  double lambda_mask = 3.0, lambda_flow = 16.0, lambda_smooth = 0.5;
  MatchOpts match;
  ModelOpts model;
  std::string resume, out, history;
};

std::vector<std::pair<Image, Mask>> load_corpus(const TrainArgs& a) {
  if (a.procedural > 0) return make_procedural_corpus(a.corpus_seed, a.procedural, a.height, a.width);
  if (a.corpus.empty()) throw FormatError("train: need --corpus or --procedural");
  std::ifstream is(a.corpus);
  if (!is) throw FormatError(a.corpus + ": cannot open");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError(a.corpus + ": " + e.what());
  }
  if (!j.is_array()) throw FormatError(a.corpus + ": manifest must be a JSON array");
  std::vector<std::pair<Image, Mask>> corpus;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("image") || !item.contains("mask"))
      throw FormatError(a.corpus + ": each entry needs image and mask paths");
    corpus.emplace_back(load_image(item.at("image").get<std::string>()),
                        load_mask(item.at("mask").get<std::string>()));
  }
  if (corpus.empty()) throw FormatError(a.corpus + ": empty manifest");
  return corpus;
}

int run_train(const TrainArgs& a) {
  const auto corpus = load_corpus(a);

  TrainerConfig cfg;
  cfg.batch_size = a.batch;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.lr_drop_epoch = a.lr_drop_epoch;
  cfg.lr_drop_factor = a.lr_drop_factor;
  cfg.adam_beta1 = a.adam_beta1;
  cfg.adam_beta2 = a.adam_beta2;
  cfg.seed = a.seed;
  cfg.ranges = {a.rotation, a.scale_lo, a.scale_hi, a.translation, a.shear};

  const LossWeights weights{a.lambda_mask, a.lambda_flow, a.lambda_smooth};
  const MatchConfig mc = to_match_config(a.match);

  TrainedModel model;
  AdamState adam;
  std::size_t start_epoch = 0;
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    model = std::move(ck.model);
    adam = std::move(ck.adam);
    start_epoch = ck.epochs_done;
  } else {
    model = resolve_model(a.model);
  }

  const TrainResult res =
      train(corpus, cfg, weights, mc, std::move(model), std::move(adam), start_epoch);
  save_checkpoint(a.out, res.model, res.adam, cfg.epochs);
  std::cout << "wrote checkpoint " << a.out << ".json\n";

  if (!a.history.empty()) {
    std::ofstream os(a.history);
    if (!os) throw FormatError(a.history + ": cannot open for writing");
    os << std::setprecision(17);
    os << "epoch,total,mask,flow,smooth\n";
    for (std::size_t i = 0; i < res.history.size(); ++i) {
      const EpochStats& e = res.history[i];
      os << start_epoch + i << "," << e.total << "," << e.mask_term << "," << e.flow_term
         << "," << e.smooth_term << "\n";
    }
    std::cout << "wrote " << a.history << "\n";
  }
  if (!res.history.empty())
    std::cout << "final epoch loss " << res.history.back().total << "\n";
  return 0;
}

// ---------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string pairs;
  double alpha = 0.1;
  std::string norm = "bbox";
  MatchOpts match;
  ModelOpts model;
  std::string out;
};

int taxonomy_code(const std::exception& e) {
  if (dynamic_cast<const FormatError*>(&e)) return 2;
  if (dynamic_cast<const ShapeError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

int run_eval(const EvalArgs& a) {
  const auto rows = read_manifest(a.pairs);
  if (rows.empty()) throw FormatError(a.pairs + ": empty manifest");
  const TrainedModel model = resolve_model(a.model);
  const MatchConfig mc = to_match_config(a.match);
  EvalConfig ec;
  ec.alpha = a.alpha;
  ec.normalization = parse_norm(a.norm);

  json report;
  report["alpha"] = a.alpha;
  report["normalization"] = a.norm;
  report["pairs"] = json::array();
  std::vector<double> pcks, lts, ious;
  int failed = 0, exit_code = 0;

  for (const auto& row : rows) {
    json entry;
    entry["src"] = row.empty() ? "" : row[0];
    entry["tgt"] = row.size() > 1 ? row[1] : "";
    try {
      if (row.size() < 4)
        throw FormatError(a.pairs + ": pair line needs src,tgt,src_kps,tgt_kps");
      const Image src = load_image(row[0]);
      const Image tgt = load_image(row[1]);
      const auto [Fs, Ft] = model_match(model, src, tgt, mc);

      if (!row[2].empty() && !row[3].empty()) {
        const KeypointSet skps = load_keypoints(row[2], src.h, src.w);
        KeypointSet tkps = load_keypoints(row[3], tgt.h, tgt.w);
        KeypointSet pred = transfer_keypoints(skps, Fs, src.h, src.w, tgt.h, tgt.w);
        if (row.size() > 4 && !row[4].empty()) tkps.bbox = load_bbox(row[4]);
        if (ec.normalization == Normalization::img) {
          // Image normalization scores in unit coordinates.
          for (Keypoint& kp : pred.points) {
            kp.x /= static_cast<double>(tgt.w);
            kp.y /= static_cast<double>(tgt.h);
          }
          for (Keypoint& kp : tkps.points) {
            kp.x /= static_cast<double>(tgt.w);
            kp.y /= static_cast<double>(tgt.h);
          }
        }
        const double p = pck(pred, tkps, ec);
        entry["pck"] = p;
        pcks.push_back(p);
      }

      if (row.size() > 6 && !row[5].empty() && !row[6].empty()) {
        const Mask sm = load_mask(row[5]);
        const Mask tm = load_mask(row[6]);
        const FlowField fpix = upsample_flow(Ft, tm.h, tm.w);
        const ScalarGrid warped = warp_scalar(mask_grid(sm), fpix);
        Mask transferred(tm.h, tm.w);
        transferred.values = warped.values;
        const TransferScores ts = mask_transfer_scores(tm, transferred);
        entry["lt_acc"] = ts.lt_acc;
        entry["iou"] = ts.iou;
        lts.push_back(ts.lt_acc);
        ious.push_back(ts.iou);
      }
    } catch (const std::exception& e) {
      entry["error"] = e.what();
      ++failed;
      if (exit_code == 0) exit_code = taxonomy_code(e);
    }
    report["pairs"].push_back(entry);
  }

  const auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  report["mean"] = json::object();
  if (!pcks.empty()) report["mean"]["pck"] = mean(pcks);
  if (!lts.empty()) {
    report["mean"]["lt_acc"] = mean(lts);
    report["mean"]["iou"] = mean(ious);
  }
  report["evaluated"] = rows.size() - static_cast<std::size_t>(failed);
  report["failed"] = failed;

  std::ofstream os(a.out);
  if (!os) throw FormatError(a.out + ": cannot open for writing");
  os << report.dump(2) << "\n";
  std::cout << "wrote " << a.out;
  if (!pcks.empty()) std::cout << ", mean pck " << mean(pcks);
  if (failed > 0) std::cout << ", " << failed << " pair(s) failed";
  std::cout << "\n";
  return exit_code;
}

// ---------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string pairs;
  std::vector<double> betas{50.0};
  std::vector<double> sigmas{5.0};
  std::string mode = "kernel_soft";
  double alpha = 0.1;
  std::string norm = "bbox";
  ModelOpts model;
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  for (double b : a.betas)
    if (!(b > 0.0)) throw NumericError("sweep: beta values must be positive");
  for (double s : a.sigmas)
    if (!(s > 0.0)) throw NumericError("sweep: sigma values must be positive");
  const auto rows = read_manifest(a.pairs);
  if (rows.empty()) throw FormatError(a.pairs + ": empty manifest");

  const TrainedModel model = resolve_model(a.model);
  EvalConfig ec;
  ec.alpha = a.alpha;
  ec.normalization = parse_norm(a.norm);

  // Features do not depend on (beta, sigma); extract once per pair.
  struct PairData {
    std::vector<FeatureMap> S, T;
    KeypointSet skps, tkps;
    std::size_t sh, sw, th, tw;
  };
  std::vector<PairData> data;
  for (const auto& row : rows) {
    if (row.size() < 4)
      throw FormatError(a.pairs + ": pair line needs src,tgt,src_kps,tgt_kps");
    const Image src = load_image(row[0]);
    const Image tgt = load_image(row[1]);
    PairData d;
    d.S = adapted_levels(model, src);
    d.T = adapted_levels(model, tgt);
    d.skps = load_keypoints(row[2], src.h, src.w);
    d.tkps = load_keypoints(row[3], tgt.h, tgt.w);
    if (row.size() > 4 && !row[4].empty()) d.tkps.bbox = load_bbox(row[4]);
    d.sh = src.h;
    d.sw = src.w;
    d.th = tgt.h;
    d.tw = tgt.w;
    data.push_back(std::move(d));
  }

  struct Cell {
    double beta, sigma, mean_pck;
  };
  std::vector<Cell> cells;
  std::size_t best = 0;
  for (double beta : a.betas)
    for (double sigma : a.sigmas) {
      MatchConfig mc;
      mc.beta = beta;
      mc.sigma = sigma;
      mc.mode = parse_mode(a.mode);
      double sum = 0.0;
      for (const PairData& d : data) {
        const auto [Fs, Ft] = match(d.S, d.T, mc);
        KeypointSet pred = transfer_keypoints(d.skps, Fs, d.sh, d.sw, d.th, d.tw);
        KeypointSet gt = d.tkps;
        if (ec.normalization == Normalization::img) {
          for (Keypoint& kp : pred.points) {
            kp.x /= static_cast<double>(d.tw);
            kp.y /= static_cast<double>(d.th);
          }
          for (Keypoint& kp : gt.points) {
            kp.x /= static_cast<double>(d.tw);
            kp.y /= static_cast<double>(d.th);
          }
        }
        sum += pck(pred, gt, ec);
      }
      cells.push_back({beta, sigma, sum / static_cast<double>(data.size())});
      if (cells.back().mean_pck > cells[best].mean_pck) best = cells.size() - 1;
    }

  std::ofstream os(a.out);
  if (!os) throw FormatError(a.out + ": cannot open for writing");
  os << std::setprecision(17);
  os << "beta,sigma,mean_pck,best\n";
  for (std::size_t i = 0; i < cells.size(); ++i)
    os << cells[i].beta << "," << cells[i].sigma << "," << cells[i].mean_pck << ","
       << (i == best ? 1 : 0) << "\n";
  std::cout << "wrote " << a.out << ", best beta=" << cells[best].beta
            << " sigma=" << cells[best].sigma << " pck=" << cells[best].mean_pck << "\n";
  return 0;
}

// ---------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string image, mask;
  std::uint64_t scene_seed = 1;
  std::size_t height = 320, width = 320;
  std::uint64_t seed = 1;
  double rotation = 15.0, scale_lo = 0.85, scale_hi = 1.15, translation = 0.10, shear = 0.1;
  std::size_t working = 20;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  Image img;
  Mask mask;
  if (!a.image.empty()) {
    if (a.mask.empty()) throw FormatError("synth: --image needs --mask");
    img = load_image(a.image);
    mask = load_mask(a.mask);
  } else {
    auto scene = make_procedural_scene(a.scene_seed, a.height, a.width);
    img = std::move(scene.first);
    mask = std::move(scene.second);
  }

  const AffineRanges ranges{a.rotation, a.scale_lo, a.scale_hi, a.translation, a.shear};
  const SynthPair pair = generate_pair(img, mask, a.seed, ranges, a.working, a.working);

  const std::string ext = raster_ext(pair.src);
  save_image(a.out + ".src" + ext, pair.src);
  save_image(a.out + ".tgt" + ext, pair.tgt);
  save_mask(a.out + ".src_mask.pgm", pair.src_mask);
  save_mask(a.out + ".tgt_mask.pgm", pair.tgt_mask);
  save_flow(pair.gt_flow, a.out + ".flow.sffl");

  json j;
  j["seed"] = a.seed;
  j["transform"] = {{"a11", pair.transform.a11()}, {"a12", pair.transform.a12()},
                    {"a21", pair.transform.a21()}, {"a22", pair.transform.a22()},
                    {"tx", pair.transform.tx()},   {"ty", pair.transform.ty()}};
  std::ofstream os(a.out + ".json");
  if (!os) throw FormatError(a.out + ".json: cannot open for writing");
  os << j.dump(2) << "\n";
  std::cout << "wrote " << a.out << ".{src,tgt,src_mask,tgt_mask,flow,json}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semflow: dense semantic-flow matching pipeline"};
  app.require_subcommand(1);

  CLI::App* cmd_match = app.add_subcommand("match", "match two inputs and write flow fields");
  MatchArgs ma;
  Layered lm(cmd_match);
  cmd_match->add_option("--src", ma.src, "source image (or .sfnf feature levels)")
      ->required()
      ->delimiter(',');
  cmd_match->add_option("--tgt", ma.tgt, "target image (or .sfnf feature levels)")
      ->required()
      ->delimiter(',');
  lm.add("out-fs", ma.out_fs, "output path for the source flow (SFFL)")->required();
  lm.add("out-ft", ma.out_ft, "output path for the target flow (SFFL)")->required();
  add_match_opts(lm, ma.match);
  add_model_opts(lm, ma.model);
  lm.flag("warp", ma.warp, "also write warped source artifacts");
  lm.add("src-mask", ma.src_mask_path, "source mask (P5) for --warp");
  lm.add("out-warped-mask", ma.out_warped_mask, "warped source mask output (P5)");
  lm.add("out-warped-image", ma.out_warped_image, "warped source image output");

  CLI::App* cmd_train = app.add_subcommand("train", "train the adaptation layers");
  TrainArgs ta;
  Layered lt(cmd_train);
  lt.add("corpus", ta.corpus, "JSON manifest: [{\"image\": path, \"mask\": path}, ...]");
  lt.add("procedural", ta.procedural, "generate this many procedural scenes instead");
  lt.add("height", ta.height, "procedural scene height");
  lt.add("width", ta.width, "procedural scene width");
  lt.add("corpus-seed", ta.corpus_seed, "procedural corpus seed");
  lt.add("batch-size", ta.batch, "batch size");
  lt.add("epochs", ta.epochs, "total epochs");
  lt.add("lr", ta.lr, "learning rate");
  lt.add("lr-drop-epoch", ta.lr_drop_epoch, "epoch at which the learning rate drops");
  lt.add("lr-drop-factor", ta.lr_drop_factor, "learning-rate division factor");
  lt.add("adam-beta1", ta.adam_beta1, "Adam first-moment decay");
  lt.add("adam-beta2", ta.adam_beta2, "Adam second-moment decay");
  lt.add("seed", ta.seed, "training seed (pair generation, shuffling)");
  lt.add("rotation", ta.rotation, "max abs rotation, degrees");
  lt.add("scale-lo", ta.scale_lo, "min scale");
  lt.add("scale-hi", ta.scale_hi, "max scale");
  lt.add("translation", ta.translation, "max abs translation, fraction of frame");
  lt.add("shear", ta.shear, "max abs shear coefficient");
  lt.add("lambda-mask", ta.lambda_mask, "mask consistency weight");
  lt.add("lambda-flow", ta.lambda_flow, "flow consistency weight");
  lt.add("lambda-smooth", ta.lambda_smooth, "smoothness weight");
  add_match_opts(lt, ta.match);
  add_model_opts(lt, ta.model, /*with_checkpoint=*/false);
  lt.add("resume", ta.resume, "checkpoint prefix to resume from");
  lt.add("out", ta.out, "output checkpoint prefix")->required();
  lt.add("history", ta.history, "loss history CSV output path");

  CLI::App* cmd_eval = app.add_subcommand("eval", "score keypoint and mask transfer");
  EvalArgs ea;
  Layered le(cmd_eval);
  le.add("pairs", ea.pairs,
         "CSV manifest: src,tgt,src_kps,tgt_kps[,bbox[,src_mask,tgt_mask]]")
      ->required();
  le.add("alpha", ea.alpha, "PCK tolerance");
  le.add("norm", ea.norm, "PCK normalization")->check(CLI::IsMember({"img", "bbox"}));
  add_match_opts(le, ea.match);
  add_model_opts(le, ea.model);
  le.add("out", ea.out, "JSON report output path")->required();

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "grid-search beta and sigma by mean PCK");
  SweepArgs wa;
  Layered lw(cmd_sweep);
  lw.add("pairs", wa.pairs, "validation manifest (same format as eval)")->required();
  lw.add("betas", wa.betas, "beta values")->delimiter(',');
  lw.add("sigmas", wa.sigmas, "sigma values")->delimiter(',');
  lw.add("mode", wa.mode, "argmax mode")
      ->check(CLI::IsMember({"discrete", "soft", "kernel_soft"}));
  lw.add("alpha", wa.alpha, "PCK tolerance");
  lw.add("norm", wa.norm, "PCK normalization")->check(CLI::IsMember({"img", "bbox"}));
  add_model_opts(lw, wa.model);
  lw.add("out", wa.out, "CSV output path")->required();

  CLI::App* cmd_synth = app.add_subcommand("synth", "render one synthetic training pair");
  SynthArgs sa;
  Layered ls(cmd_synth);
  ls.add("image", sa.image, "source image (procedural scene when absent)");
  ls.add("mask", sa.mask, "source mask (P5)");
  ls.add("scene-seed", sa.scene_seed, "procedural scene seed");
  ls.add("height", sa.height, "procedural scene height");
  ls.add("width", sa.width, "procedural scene width");
  ls.add("seed", sa.seed, "transform seed");
  ls.add("rotation", sa.rotation, "max abs rotation, degrees");
  ls.add("scale-lo", sa.scale_lo, "min scale");
  ls.add("scale-hi", sa.scale_hi, "max scale");
  ls.add("translation", sa.translation, "max abs translation, fraction of frame");
  ls.add("shear", sa.shear, "max abs shear coefficient");
  ls.add("working", sa.working, "working grid size for the ground-truth flow");
  ls.add("out", sa.out, "output path prefix")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_match) {
      lm.apply_config();
      return run_match(ma);
    }
    if (*cmd_train) {
      lt.apply_config();
      return run_train(ta);
    }
    if (*cmd_eval) {
      le.apply_config();
      return run_eval(ea);
    }
    if (*cmd_sweep) {
      lw.apply_config();
      return run_sweep(wa);
    }
    if (*cmd_synth) {
      ls.apply_config();
      return run_synth(sa);
    }
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
