#include "semflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "semflow/errors.hpp"

namespace semflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Draw order is part of the format: rotation, scale, shear, tx, ty.
AffineTransform sample_transform(Rng& rng, const AffineRanges& r, std::size_t w,
                                 std::size_t h) {
  const double rot = rng.uniform(-r.rotation_deg, r.rotation_deg) * kPi / 180.0;
  const double sc = rng.uniform(r.scale_lo, r.scale_hi);
  const double sh = rng.uniform(-r.shear, r.shear);
  const double tx = rng.uniform(-r.translation_frac, r.translation_frac) * static_cast<double>(w);
  const double ty = rng.uniform(-r.translation_frac, r.translation_frac) * static_cast<double>(h);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  return AffineTransform::translation(-cx, -cy)
      .then(AffineTransform(1.0, sh, 0.0, 1.0, 0.0, 0.0))
      .then(AffineTransform(sc, 0.0, 0.0, sc, 0.0, 0.0))
      .then(AffineTransform(std::cos(rot), -std::sin(rot), std::sin(rot), std::cos(rot), 0.0,
                            0.0))
      .then(AffineTransform::translation(cx + tx, cy + ty));
}

bool retention_ok(const Mask& mask, const AffineTransform& t, std::size_t fg_total) {
  if (fg_total == 0) return true;
  std::size_t kept = 0;
  const double xmax = static_cast<double>(mask.w) - 1.0;
  const double ymax = static_cast<double>(mask.h) - 1.0;
  for (std::size_t y = 0; y < mask.h; ++y)
    for (std::size_t x = 0; x < mask.w; ++x) {
      if (mask.at(y, x) <= 0.5) continue;
      const GridPoint q = t.apply({static_cast<double>(x), static_cast<double>(y)});
      if (q.x >= 0.0 && q.x <= xmax && q.y >= 0.0 && q.y <= ymax) ++kept;
    }
  return 2 * kept >= fg_total;
}

ScalarGrid channel_grid(const Image& img, std::size_t c) {
  ScalarGrid g(img.h, img.w);
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) g.at(y, x) = img.at(y, x, c);
  return g;
}

// Pixel <-> working-grid change of basis for one axis pair.
AffineTransform grid_to_pixel(std::size_t img_h, std::size_t img_w, std::size_t gh,
                              std::size_t gw) {
  const double sx = static_cast<double>(img_w) / static_cast<double>(gw);
  const double sy = static_cast<double>(img_h) / static_cast<double>(gh);
  return AffineTransform(sx, 0.0, 0.0, sy, 0.5 * sx - 0.5, 0.5 * sy - 0.5);
}

}  // namespace

SynthPair generate_pair(const Image& img, const Mask& mask, std::uint64_t seed,
                        const AffineRanges& ranges, std::size_t working_h,
                        std::size_t working_w) {
  if (mask.h != img.h || mask.w != img.w)
    throw ShapeError("generate_pair: mask dims differ from image");
  if (working_h == 0 || working_w == 0) throw ShapeError("generate_pair: zero working grid");

  Rng rng(seed);
  const std::size_t fg_total = mask.foreground_count();
  AffineTransform t;
  bool ok = false;
  for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
    t = sample_transform(rng, ranges, img.w, img.h);
    if (t.determinant() == 0.0) continue;
    ok = retention_ok(mask, t, fg_total);
  }
  if (!ok) throw NumericError("generate_pair: foreground lost in 10 transform draws");

  SynthPair pair;
  pair.src = img;
  pair.src_mask = mask;
  pair.transform = t;

  // Inverse mapping with zero padding: pixels pulled from outside the
  // source frame come out black / background.
  const AffineTransform inv = t.inverse();
  pair.tgt = img;
  std::vector<ScalarGrid> channels(img.channels);
  for (std::size_t c = 0; c < img.channels; ++c) channels[c] = channel_grid(img, c);
  ScalarGrid mask_grid(mask.h, mask.w);
  mask_grid.values = mask.values;

  pair.tgt_mask = Mask(mask.h, mask.w);
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) {
      const GridPoint s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      for (std::size_t c = 0; c < img.channels; ++c)
        pair.tgt.at(y, x, c) = bilinear_sample(channels[c], s);
      pair.tgt_mask.at(y, x) = bilinear_sample(mask_grid, s) > 0.5 ? 1.0 : 0.0;
    }

  const AffineTransform g2p = grid_to_pixel(img.h, img.w, working_h, working_w);
  pair.gt_flow = affine_to_flow(g2p.then(t).then(g2p.inverse()), working_h, working_w);
  return pair;
}

namespace {

Image flip_image(const Image& img) {
  Image out = img;
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(y, img.w - 1 - x, c);
  return out;
}

Mask flip_mask(const Mask& m) {
  Mask out(m.h, m.w);
  for (std::size_t y = 0; y < m.h; ++y)
    for (std::size_t x = 0; x < m.w; ++x) out.at(y, x) = m.at(y, m.w - 1 - x);
  return out;
}

}  // namespace

SynthPair augment_flip(const SynthPair& pair) {
  SynthPair out;
  out.src = flip_image(pair.src);
  out.tgt = flip_image(pair.tgt);
  out.src_mask = flip_mask(pair.src_mask);
  out.tgt_mask = flip_mask(pair.tgt_mask);

  out.gt_flow = FlowField(pair.gt_flow.h, pair.gt_flow.w);
  const std::size_t gw = pair.gt_flow.w;
  for (std::size_t y = 0; y < pair.gt_flow.h; ++y)
    for (std::size_t x = 0; x < gw; ++x) {
      out.gt_flow.dx_at(y, x) = -pair.gt_flow.dx_at(y, gw - 1 - x);
      out.gt_flow.dy_at(y, x) = pair.gt_flow.dy_at(y, gw - 1 - x);
    }

  // Conjugation by the pixel flip x -> (w-1) - x, written out directly so
  // the coefficients don't drift through repeated compositions.
  const double m = static_cast<double>(pair.src.w) - 1.0;
  const AffineTransform& t = pair.transform;
  out.transform =
      AffineTransform(t.a11(), -t.a12(), -t.a21(), t.a22(),
                      m - t.a11() * m - t.tx(), t.a21() * m + t.ty());
  return out;
}

Mask boxes_to_masks(const std::vector<Box>& boxes, std::size_t h, std::size_t w) {
  for (const Box& b : boxes) {
    if (b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > static_cast<double>(w) ||
        b.y1 > static_cast<double>(h) || b.x0 > b.x1 || b.y0 > b.y1)
      throw ShapeError("boxes_to_masks: box outside frame");
  }
  if (boxes.empty()) std::cerr << "boxes_to_masks: empty box list, mask is empty\n";
  Mask out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double cx = static_cast<double>(x);
      const double cy = static_cast<double>(y);
      for (const Box& b : boxes)
        if (cx >= b.x0 && cx < b.x1 && cy >= b.y0 && cy < b.y1) {
          out.at(y, x) = 1.0;
          break;
        }
    }
  return out;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr, double beta1, double beta2) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads count differs");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state size mismatch");

  state.step += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  constexpr double eps = 1e-8;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    require_same_shape(p, g, "adam_step");
    require_same_shape(p, state.m[i], "adam_step state");
    double* pv = p.data();
    const double* gv = g.data();
    double* mv = state.m[i].data();
    double* vv = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      mv[k] = beta1 * mv[k] + (1.0 - beta1) * gv[k];
      vv[k] = beta2 * vv[k] + (1.0 - beta2) * gv[k] * gv[k];
      pv[k] -= lr * (mv[k] / c1) / (std::sqrt(vv[k] / c2) + eps);
    }
  }
}

TrainedModel TrainedModel::init(const ToyExtractor& e, std::uint64_t weight_seed) {
  TrainedModel model;
  model.extractor = e;
  Rng r1 = Rng(weight_seed).fork(1);
  Rng r2 = Rng(weight_seed).fork(2);
  model.level1 = AdaptationLayer::make(5, e.d, r1);
  model.level2 = AdaptationLayer::make(3, e.d, r2);
  return model;
}

std::pair<FlowField, FlowField> model_match(const TrainedModel& model, const Image& src,
                                            const Image& tgt, const MatchConfig& cfg) {
  const auto [s1, s2] = extract_toy(src, model.extractor);
  const auto [t1, t2] = extract_toy(tgt, model.extractor);
  const std::vector<FeatureMap> S{adapt(s1, model.level1), adapt(s2, model.level2)};
  const std::vector<FeatureMap> T{adapt(t1, model.level1), adapt(t2, model.level2)};
  return match(S, T, cfg);
}

namespace {

struct ParamLeaves {
  ad::Var k1a, b1a, k2a, b2a;  // level 1 blocks
  ad::Var k1b, b1b, k2b, b2b;  // level 2 blocks
};

ParamLeaves make_leaves(const TrainedModel& m) {
  ParamLeaves L;
  L.k1a = ad::Var::leaf(m.level1.block1.kernel);
  L.b1a = ad::Var::leaf(m.level1.block1.bias);
  L.k2a = ad::Var::leaf(m.level1.block2.kernel);
  L.b2a = ad::Var::leaf(m.level1.block2.bias);
  L.k1b = ad::Var::leaf(m.level2.block1.kernel);
  L.b1b = ad::Var::leaf(m.level2.block1.bias);
  L.k2b = ad::Var::leaf(m.level2.block2.kernel);
  L.b2b = ad::Var::leaf(m.level2.block2.bias);
  return L;
}

}  // namespace

TrainResult train(const std::vector<std::pair<Image, Mask>>& corpus, const TrainerConfig& cfg,
                  const LossWeights& weights, const MatchConfig& match_cfg,
                  TrainedModel model, AdamState adam, std::size_t start_epoch) {
  if (corpus.empty()) throw ShapeError("train: empty corpus");
  if (cfg.batch_size == 0) throw ShapeError("train: zero batch size");
  if (!(cfg.lr > 0.0)) throw NumericError("train: learning rate must be positive");

  const std::size_t gh = model.extractor.working_h;
  const std::size_t gw = model.extractor.working_w;
  TrainResult out{std::move(model), std::move(adam), {}};
  const Rng base(cfg.seed);

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng erng = base.fork(1000 + epoch);
    std::vector<SynthPair> pairs;
    pairs.reserve(corpus.size());
    for (const auto& [img, mask] : corpus)
      pairs.push_back(generate_pair(img, mask, erng.next_u64(), cfg.ranges, gh, gw));
    for (SynthPair& p : pairs)
      if (erng.uniform() < 0.5) p = augment_flip(p);
    for (std::size_t i = pairs.size(); i > 1; --i)
      std::swap(pairs[i - 1], pairs[erng.uniform_index(i)]);

    const double lr =
        epoch >= cfg.lr_drop_epoch ? cfg.lr / cfg.lr_drop_factor : cfg.lr;

    EpochStats es;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, pairs.size());
      const double inv_n = 1.0 / static_cast<double>(end - start);
      ParamLeaves L = make_leaves(out.model);

      // Pairs run one at a time; backward on each scaled loss accumulates
      // the batch-mean gradient into the shared weight leaves.
      for (std::size_t i = start; i < end; ++i) {
        const SynthPair& p = pairs[i];
        const auto [s1, s2] = extract_toy(p.src, out.model.extractor);
        const auto [t1, t2] = extract_toy(p.tgt, out.model.extractor);
        const ad::Var as1 = adapt(ad::Var::constant(s1.data), L.k1a, L.b1a, L.k2a, L.b2a);
        const ad::Var as2 = adapt(ad::Var::constant(s2.data), L.k1b, L.b1b, L.k2b, L.b2b);
        const ad::Var at1 = adapt(ad::Var::constant(t1.data), L.k1a, L.b1a, L.k2a, L.b2a);
        const ad::Var at2 = adapt(ad::Var::constant(t2.data), L.k1b, L.b1b, L.k2b, L.b2b);
        const auto [FsV, FtV] = match_var({as1, as2}, {at1, at2}, match_cfg);
        const Mask Ms = resample_mask(p.src_mask, gh, gw);
        const Mask Mt = resample_mask(p.tgt_mask, gh, gw);
        const LossVars lv = total_loss_var(FsV, FtV, Ms, Mt, weights);

        if (!lv.total.value().all_finite()) {
          std::ostringstream msg;
          msg << "train: non-finite loss at epoch " << epoch << " pair " << i
              << " (mask=" << lv.mask_term.value()[0] << " flow=" << lv.flow_term.value()[0]
              << " smooth=" << lv.smooth_term.value()[0] << ")";
          throw NumericError(msg.str());
        }
        ad::backward(ad::scale(lv.total, inv_n));
        es.total += lv.total.value()[0];
        es.mask_term += lv.mask_term.value()[0];
        es.flow_term += lv.flow_term.value()[0];
        es.smooth_term += lv.smooth_term.value()[0];
      }

      const std::vector<Tensor*> params{
          &out.model.level1.block1.kernel, &out.model.level1.block1.bias,
          &out.model.level1.block2.kernel, &out.model.level1.block2.bias,
          &out.model.level2.block1.kernel, &out.model.level2.block1.bias,
          &out.model.level2.block2.kernel, &out.model.level2.block2.bias};
      const std::vector<const Tensor*> grads{&L.k1a.grad(), &L.b1a.grad(), &L.k2a.grad(),
                                             &L.b2a.grad(), &L.k1b.grad(), &L.b1b.grad(),
                                             &L.k2b.grad(), &L.b2b.grad()};
      for (const Tensor* g : grads)
        if (!g->all_finite()) {
          std::ostringstream msg;
          msg << "train: non-finite gradient at epoch " << epoch << " batch starting at "
              << start;
          throw NumericError(msg.str());
        }
      adam_step(params, grads, out.adam, lr, cfg.adam_beta1, cfg.adam_beta2);
    }

    const double inv_pairs = 1.0 / static_cast<double>(pairs.size());
    es.total *= inv_pairs;
    es.mask_term *= inv_pairs;
    es.flow_term *= inv_pairs;
    es.smooth_term *= inv_pairs;
    out.history.push_back(es);
  }
  return out;
}

namespace {

// Tensors ride in SFNF files folded to three axes; the JSON index keeps
// the true shape.
void save_blob(const std::string& path, const Tensor& t) {
  std::size_t a = 1, b = 1, c = 1;
  const auto& s = t.shape();
  if (s.size() == 4) {
    a = s[0];
    b = s[1];
    c = s[2] * s[3];
  } else if (s.size() == 3) {
    a = s[0];
    b = s[1];
    c = s[2];
  } else if (s.size() == 2) {
    b = s[0];
    c = s[1];
  } else if (s.size() == 1) {
    c = s[0];
  }
  FeatureMap fm(a, b, c);
  fm.data.raw() = t.raw();
  save_feature_map(path, fm);
}

Tensor load_blob(const std::string& path, const std::vector<std::size_t>& shape) {
  const FeatureMap fm = load_feature_map(path);
  Tensor t(shape);
  if (t.size() != fm.data.size())
    throw FormatError(path + ": blob size does not match indexed shape");
  t.raw() = fm.data.raw();
  return t;
}

// Canonical parameter order shared by the trainer, Adam state, and
// checkpoints.
std::vector<std::pair<std::string, const Tensor*>> named_params(const TrainedModel& m) {
  return {{"l1.k1", &m.level1.block1.kernel}, {"l1.b1", &m.level1.block1.bias},
          {"l1.k2", &m.level1.block2.kernel}, {"l1.b2", &m.level1.block2.bias},
          {"l2.k1", &m.level2.block1.kernel}, {"l2.b1", &m.level2.block1.bias},
          {"l2.k2", &m.level2.block2.kernel}, {"l2.b2", &m.level2.block2.bias}};
}

}  // namespace

void save_checkpoint(const std::string& prefix, const TrainedModel& model, const AdamState& adam,
                     std::size_t epochs_done) {
  nlohmann::json j;
  j["format"] = "semflow-checkpoint";
  j["version"] = 1;
  j["epochs_done"] = epochs_done;
  j["extractor"] = {{"seed", model.extractor.seed},
                    {"working_h", model.extractor.working_h},
                    {"working_w", model.extractor.working_w},
                    {"d", model.extractor.d}};
  j["adam_step"] = adam.step;

  nlohmann::json tensors = nlohmann::json::array();
  const auto params = named_params(model);
  for (const auto& [name, t] : params) {
    const std::string file = prefix + "." + name + ".sfnf";
    save_blob(file, *t);
    tensors.push_back({{"name", name}, {"shape", t->shape()}});
  }
  if (!adam.m.empty()) {
    if (adam.m.size() != params.size())
      throw ShapeError("save_checkpoint: Adam state does not match parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
      save_blob(prefix + "." + params[i].first + ".adam_m.sfnf", adam.m[i]);
      save_blob(prefix + "." + params[i].first + ".adam_v.sfnf", adam.v[i]);
    }
    j["adam_moments"] = true;
  } else {
    j["adam_moments"] = false;
  }

  j["tensors"] = tensors;
  std::ofstream os(prefix + ".json");
  if (!os) throw FormatError(prefix + ".json: cannot open for writing");
  os << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& prefix) {
  std::ifstream is(prefix + ".json");
  if (!is) throw FormatError(prefix + ".json: cannot open");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(prefix + ".json: " + e.what());
  }
  if (j.value("format", "") != "semflow-checkpoint")
    throw FormatError(prefix + ".json: not a checkpoint index");

  Checkpoint ck;
  ck.epochs_done = j.at("epochs_done").get<std::size_t>();
  ck.model.extractor.seed = j.at("extractor").at("seed").get<std::uint64_t>();
  ck.model.extractor.working_h = j.at("extractor").at("working_h").get<std::size_t>();
  ck.model.extractor.working_w = j.at("extractor").at("working_w").get<std::size_t>();
  ck.model.extractor.d = j.at("extractor").at("d").get<std::size_t>();
  ck.adam.step = j.at("adam_step").get<std::size_t>();

  std::vector<Tensor*> slots{
      &ck.model.level1.block1.kernel, &ck.model.level1.block1.bias,
      &ck.model.level1.block2.kernel, &ck.model.level1.block2.bias,
      &ck.model.level2.block1.kernel, &ck.model.level2.block1.bias,
      &ck.model.level2.block2.kernel, &ck.model.level2.block2.bias};
  const auto names = named_params(ck.model);
  const auto& tensors = j.at("tensors");
  if (tensors.size() != slots.size())
    throw FormatError(prefix + ".json: unexpected tensor count");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != names[i].first)
      throw FormatError(prefix + ".json: tensor order mismatch");
    const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
    *slots[i] = load_blob(prefix + "." + names[i].first + ".sfnf", shape);
  }
  if (j.value("adam_moments", false)) {
    for (std::size_t i = 0; i < slots.size(); ++i) {
      ck.adam.m.push_back(
          load_blob(prefix + "." + names[i].first + ".adam_m.sfnf", slots[i]->shape()));
      ck.adam.v.push_back(
          load_blob(prefix + "." + names[i].first + ".adam_v.sfnf", slots[i]->shape()));
    }
  }
  return ck;
}

namespace {

// Two-octave value noise on a wrapping lattice with roughly 8 px and 4 px
// cell spacing. `period` is the wrap length; a period larger than the
// frame makes the texture effectively aperiodic within it.
struct TileNoise {
  double period = 24.0;
  std::size_t n1 = 3, n2 = 6;  // lattice cells per wrap length, per octave
  std::vector<double> v1, v2;

  static TileNoise make(Rng& rng, double period) {
    TileNoise t;
    t.period = period;
    t.n1 = static_cast<std::size_t>(std::lround(period / 8.0));
    if (t.n1 < 2) t.n1 = 2;
    t.n2 = 2 * t.n1;
    t.v1.resize(t.n1 * t.n1);
    t.v2.resize(t.n2 * t.n2);
    for (double& v : t.v1) v = rng.uniform();
    for (double& v : t.v2) v = rng.uniform();
    return t;
  }

  static double lattice(const std::vector<double>& v, std::size_t n, double fx, double fy) {
    const std::size_t x0 = static_cast<std::size_t>(fx) % n;
    const std::size_t y0 = static_cast<std::size_t>(fy) % n;
    const std::size_t x1 = (x0 + 1) % n, y1 = (y0 + 1) % n;
    const double ax = fx - std::floor(fx), ay = fy - std::floor(fy);
    return v[y0 * n + x0] * (1.0 - ax) * (1.0 - ay) + v[y0 * n + x1] * ax * (1.0 - ay) +
           v[y1 * n + x0] * (1.0 - ax) * ay + v[y1 * n + x1] * ax * ay;
  }

  double sample(double x, double y) const {
    const double tx = x - period * std::floor(x / period);
    const double ty = y - period * std::floor(y / period);
    const double s1 = static_cast<double>(n1) / period;
    const double s2 = static_cast<double>(n2) / period;
    return 0.75 * lattice(v1, n1, tx * s1, ty * s1) + 0.25 * lattice(v2, n2, tx * s2, ty * s2);
  }
};

// Frame-wide aperiodic lattice noise, bilinear between cells, clamped at
// the border. Low amplitude; exists to break exact texture duplicates.
struct SaltField {
  double spacing = 5.0;
  std::size_t nx = 0, ny = 0;
  std::vector<double> v;

  static SaltField make(Rng& rng, std::size_t h, std::size_t w) {
    SaltField s;
    s.nx = static_cast<std::size_t>(static_cast<double>(w) / s.spacing) + 2;
    s.ny = static_cast<std::size_t>(static_cast<double>(h) / s.spacing) + 2;
    s.v.resize(s.nx * s.ny);
    for (double& e : s.v) e = rng.uniform();
    return s;
  }

  double sample(double x, double y) const {
    const double fx = std::min(x / spacing, static_cast<double>(nx - 2));
    const double fy = std::min(y / spacing, static_cast<double>(ny - 2));
    const std::size_t x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
    const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
    return v[y0 * nx + x0] * (1.0 - ax) * (1.0 - ay) + v[y0 * nx + x0 + 1] * ax * (1.0 - ay) +
           v[(y0 + 1) * nx + x0] * (1.0 - ax) * ay + v[(y0 + 1) * nx + x0 + 1] * ax * ay;
  }
};

}  // namespace

std::pair<Image, Mask> make_procedural_scene(std::uint64_t seed, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("make_procedural_scene: zero dims");
  Rng rng(seed);

  Image img;
  img.h = h;
  img.w = w;
  img.channels = 1;
  img.pixels.resize(h * w);

  // Background: faint grating, low contrast on purpose.
  const double bfreq = rng.uniform(0.02, 0.05);
  const double bang = rng.uniform(0.0, kPi);
  const double bphase = rng.uniform(0.0, 2.0 * kPi);
  const double bcx = std::cos(bang), bsx = std::sin(bang);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      img.at(y, x) = 0.45 + 0.08 * std::sin(2.0 * kPi * bfreq *
                                                (bcx * static_cast<double>(x) +
                                                 bsx * static_cast<double>(y)) +
                                            bphase);

  // Foreground texture is aperiodic within the frame: every patch on the
  // object is locally unique, so the object can in principle be matched
  // exactly. Ambiguity comes from the clutter below, which repeats the
  // same texture family with different noise instances.
  const TileNoise fg = TileNoise::make(rng, 1.5 * static_cast<double>(std::max(h, w)));
  const SaltField salt = SaltField::make(rng, h, w);

  // Ellipse geometry (texture painted after the clutter pass).
  const double ecx = rng.uniform(0.35, 0.65) * static_cast<double>(w);
  const double ecy = rng.uniform(0.35, 0.65) * static_cast<double>(h);
  const double rmin = 0.14 * static_cast<double>(std::min(h, w));
  const double rmax = 0.22 * static_cast<double>(std::min(h, w));
  const double rx = rng.uniform(rmin, rmax);
  const double ry = rng.uniform(rmin, rmax);
  const double phi = rng.uniform(0.0, kPi);
  const double cphi = std::cos(phi), sphi = std::sin(phi);

  // Clutter: rectangles carrying independent noise drawn from the same
  // family as the foreground. Identical local statistics, different
  // instances: texture class alone cannot identify the object, the
  // specific noise layout can.
  const std::size_t nclutter = 8;
  for (std::size_t k = 0; k < nclutter; ++k) {
    const std::size_t cw = static_cast<std::size_t>(rng.uniform(0.10, 0.28) * static_cast<double>(w));
    const std::size_t ch = static_cast<std::size_t>(rng.uniform(0.10, 0.28) * static_cast<double>(h));
    const std::size_t cx0 = rng.uniform_index(w - cw);
    const std::size_t cy0 = rng.uniform_index(h - ch);
    const TileNoise own = TileNoise::make(rng, rng.uniform(22.0, 30.0));
    for (std::size_t y = cy0; y < cy0 + ch; ++y)
      for (std::size_t x = cx0; x < cx0 + cw; ++x)
        img.at(y, x) = 0.45 + 0.35 * (own.sample(static_cast<double>(x),
                                                 static_cast<double>(y)) -
                                      0.5);
  }

  // Foreground: ellipse carrying the noise at full contrast, exact mask.
  Mask mask(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - ecx;
      const double dy = static_cast<double>(y) - ecy;
      const double u = (dx * cphi + dy * sphi) / rx;
      const double v = (-dx * sphi + dy * cphi) / ry;
      if (u * u + v * v > 1.0) continue;
      mask.at(y, x) = 1.0;
      img.at(y, x) =
          0.50 + 0.50 * (fg.sample(static_cast<double>(x), static_cast<double>(y)) - 0.5);
    }

  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      img.at(y, x) += 0.06 * (salt.sample(static_cast<double>(x), static_cast<double>(y)) - 0.5);

  for (double& v : img.pixels) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
  }
  return {std::move(img), std::move(mask)};
}

std::vector<std::pair<Image, Mask>> make_procedural_corpus(std::uint64_t seed, std::size_t count,
                                                           std::size_t h, std::size_t w) {
  std::vector<std::pair<Image, Mask>> corpus;
  corpus.reserve(count);
  const Rng base(seed);
  for (std::size_t i = 0; i < count; ++i)
    corpus.push_back(make_procedural_scene(base.fork(i + 1).next_u64(), h, w));
  return corpus;
}

}  // namespace semflow
