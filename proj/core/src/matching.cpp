#include "semflow/matching.hpp"

#include <cmath>

#include "semflow/errors.hpp"

namespace semflow {

CorrelationMap correlate(const FeatureMap& src, const FeatureMap& tgt) {
  if (src.d != tgt.d) throw ShapeError("correlate: channel mismatch");
  CorrelationMap c(src.h, src.w, tgt.h, tgt.w);
  const std::size_t d = src.d;
  const std::size_t cells_t = tgt.h * tgt.w;
  const double* sp = src.data.data();
  const double* tp = tgt.data.data();
  double* out = c.scores.data();
  for (std::size_t p = 0; p < src.h * src.w; ++p)
    for (std::size_t q = 0; q < cells_t; ++q) {
      double acc = 0.0;
      const double* a = sp + p * d;
      const double* b = tp + q * d;
      for (std::size_t k = 0; k < d; ++k) acc += a[k] * b[k];
      out[p * cells_t + q] = acc;
    }
  return c;
}

CorrelationMap normalize_correlation(const CorrelationMap& c) {
  CorrelationMap out = c;
  const std::size_t cells_t = c.h2 * c.w2;
  for (std::size_t p = 0; p < c.h * c.w; ++p) {
    double* slice = out.scores.data() + p * cells_t;
    double s = 0.0;
    for (std::size_t q = 0; q < cells_t; ++q) s += slice[q] * slice[q];
    const double n = std::sqrt(s);
    if (n == 0.0) continue;
    for (std::size_t q = 0; q < cells_t; ++q) slice[q] /= n;
  }
  out.normalized = true;
  return out;
}

CorrelationMap combine_correlations(const CorrelationMap& a, const CorrelationMap& b) {
  require_same_shape(a.scores, b.scores, "combine_correlations");
  CorrelationMap out = a;
  const double* bv = b.scores.data();
  double* ov = out.scores.data();
  for (std::size_t i = 0; i < out.scores.size(); ++i) ov[i] *= bv[i];
  out.normalized = false;
  return out;
}

CorrelationMap transpose_correlation(const CorrelationMap& c) {
  CorrelationMap out(c.h2, c.w2, c.h, c.w);
  for (std::size_t py = 0; py < c.h; ++py)
    for (std::size_t px = 0; px < c.w; ++px)
      for (std::size_t qy = 0; qy < c.h2; ++qy)
        for (std::size_t qx = 0; qx < c.w2; ++qx)
          out.scores.at4(qy, qx, py, px) = c.scores.at4(py, px, qy, qx);
  return out;
}

namespace {

// Peak-1 Gaussian gates centered on each slice's argmax (first cell in
// row-major order on ties). Centers are reported through *centers.
Tensor argmax_kernel(const Tensor& n, double sigma, std::vector<GridPoint>* centers) {
  const std::size_t h = n.dim(0), w = n.dim(1), h2 = n.dim(2), w2 = n.dim(3);
  const std::size_t cells_t = h2 * w2;
  Tensor k(n.shape());
  const double inv = 1.0 / (2.0 * sigma * sigma);
  if (centers) centers->resize(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    const double* slice = n.data() + p * cells_t;
    std::size_t best = 0;
    for (std::size_t q = 1; q < cells_t; ++q)
      if (slice[q] > slice[best]) best = q;
    const double cy = static_cast<double>(best / w2);
    const double cx = static_cast<double>(best % w2);
    if (centers) (*centers)[p] = GridPoint{cx, cy};
    double* ks = k.data() + p * cells_t;
    for (std::size_t qy = 0; qy < h2; ++qy)
      for (std::size_t qx = 0; qx < w2; ++qx) {
        const double dx = static_cast<double>(qx) - cx;
        const double dy = static_cast<double>(qy) - cy;
        ks[qy * w2 + qx] = std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
  return k;
}

// Coordinate table over target cells, rows (qx, qy).
Tensor coord_table(std::size_t h2, std::size_t w2) {
  Tensor q({h2 * w2, 2});
  for (std::size_t qy = 0; qy < h2; ++qy)
    for (std::size_t qx = 0; qx < w2; ++qx) {
      q.at2(qy * w2 + qx, 0) = static_cast<double>(qx);
      q.at2(qy * w2 + qx, 1) = static_cast<double>(qy);
    }
  return q;
}

// Per-cell own coordinates, shape (h, w, 2).
Tensor cell_coords(std::size_t h, std::size_t w) {
  Tensor p({h, w, 2});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      p.at3(y, x, 0) = static_cast<double>(x);
      p.at3(y, x, 1) = static_cast<double>(y);
    }
  return p;
}

void check_match_config(const MatchConfig& cfg) {
  if (!(cfg.beta > 0.0)) throw NumericError("match config: beta must be positive");
  if (!(cfg.sigma > 0.0)) throw NumericError("match config: sigma must be positive");
}

}  // namespace

MatchProbability matching_probability(const CorrelationMap& c, const MatchConfig& cfg) {
  if (!c.normalized)
    throw ShapeError("matching_probability: input must pass normalize_correlation first");
  check_match_config(cfg);
  MatchProbability m;
  m.h = c.h;
  m.w = c.w;
  m.h2 = c.h2;
  m.w2 = c.w2;
  m.beta = cfg.beta;
  m.sigma = cfg.sigma;

  Tensor scores = c.scores;
  if (cfg.mode == MatchMode::kernel_soft) {
    const Tensor k = argmax_kernel(c.scores, cfg.sigma, &m.kernel_centers);
    double* s = scores.data();
    const double* kv = k.data();
    for (std::size_t i = 0; i < scores.size(); ++i) s[i] *= kv[i];
  } else {
    argmax_kernel(c.scores, cfg.sigma, &m.kernel_centers);  // centers only
  }

  // Row-wise softmax of beta * scores, max-subtracted so beta in the
  // thousands stays finite.
  const std::size_t cells_t = c.h2 * c.w2;
  for (std::size_t p = 0; p < c.h * c.w; ++p) {
    double* s = scores.data() + p * cells_t;
    double mx = s[0];
    for (std::size_t q = 1; q < cells_t; ++q) mx = std::max(mx, s[q]);
    double z = 0.0;
    for (std::size_t q = 0; q < cells_t; ++q) {
      s[q] = std::exp(cfg.beta * (s[q] - mx));
      z += s[q];
    }
    for (std::size_t q = 0; q < cells_t; ++q) s[q] /= z;
  }
  m.probs = std::move(scores);
  return m;
}

FlowField kernel_soft_argmax(const MatchProbability& m) {
  FlowField flow(m.h, m.w);
  const std::size_t cells_t = m.h2 * m.w2;
  for (std::size_t py = 0; py < m.h; ++py)
    for (std::size_t px = 0; px < m.w; ++px) {
      const double* slice = m.probs.data() + (py * m.w + px) * cells_t;
      double ex = 0.0, ey = 0.0;
      for (std::size_t qy = 0; qy < m.h2; ++qy)
        for (std::size_t qx = 0; qx < m.w2; ++qx) {
          const double p = slice[qy * m.w2 + qx];
          ex += p * static_cast<double>(qx);
          ey += p * static_cast<double>(qy);
        }
      flow.dx_at(py, px) = ex - static_cast<double>(px);
      flow.dy_at(py, px) = ey - static_cast<double>(py);
    }
  return flow;
}

FlowField discrete_argmax(const CorrelationMap& c) {
  FlowField flow(c.h, c.w);
  const std::size_t cells_t = c.h2 * c.w2;
  for (std::size_t py = 0; py < c.h; ++py)
    for (std::size_t px = 0; px < c.w; ++px) {
      const double* slice = c.scores.data() + (py * c.w + px) * cells_t;
      std::size_t best = 0;
      for (std::size_t q = 1; q < cells_t; ++q)
        if (slice[q] > slice[best]) best = q;
      flow.dx_at(py, px) = static_cast<double>(best % c.w2) - static_cast<double>(px);
      flow.dy_at(py, px) = static_cast<double>(best / c.w2) - static_cast<double>(py);
    }
  return flow;
}

namespace {

FlowField argmax_by_mode(const CorrelationMap& normalized, const MatchConfig& cfg) {
  if (cfg.mode == MatchMode::discrete) return discrete_argmax(normalized);
  return kernel_soft_argmax(matching_probability(normalized, cfg));
}

}  // namespace

std::pair<FlowField, FlowField> match(const std::vector<FeatureMap>& src_levels,
                                      const std::vector<FeatureMap>& tgt_levels,
                                      const MatchConfig& cfg) {
  if (src_levels.empty() || src_levels.size() != tgt_levels.size())
    throw ShapeError("match: need the same nonzero number of feature levels per side");
  check_match_config(cfg);

  CorrelationMap combined;
  for (std::size_t l = 0; l < src_levels.size(); ++l) {
    const FeatureMap ns = normalize_features(src_levels[l]);
    const FeatureMap nt = normalize_features(tgt_levels[l]);
    CorrelationMap c = correlate(ns, nt);
    combined = l == 0 ? std::move(c) : combine_correlations(combined, c);
  }

  const CorrelationMap n_s = normalize_correlation(combined);
  const CorrelationMap n_t = normalize_correlation(transpose_correlation(combined));
  return {argmax_by_mode(n_s, cfg), argmax_by_mode(n_t, cfg)};
}

ad::Var correlate_var(const ad::Var& src, const ad::Var& tgt) {
  const Tensor& sv = src.value();
  const Tensor& tv = tgt.value();
  if (sv.rank() != 3 || tv.rank() != 3) throw ShapeError("correlate: features must be (h,w,d)");
  if (sv.dim(2) != tv.dim(2)) throw ShapeError("correlate: channel mismatch");
  const std::size_t h = sv.dim(0), w = sv.dim(1), d = sv.dim(2);
  const std::size_t h2 = tv.dim(0), w2 = tv.dim(1);
  const std::size_t cells_s = h * w, cells_t = h2 * w2;

  Tensor out({h, w, h2, w2});
  {
    const double* sp = sv.data();
    const double* tp = tv.data();
    double* ov = out.data();
    for (std::size_t p = 0; p < cells_s; ++p)
      for (std::size_t q = 0; q < cells_t; ++q) {
        double acc = 0.0;
        const double* a = sp + p * d;
        const double* b = tp + q * d;
        for (std::size_t k = 0; k < d; ++k) acc += a[k] * b[k];
        ov[p * cells_t + q] = acc;
      }
  }
  return ad::make_node(
      std::move(out), {src, tgt},
      [cells_s, cells_t, d](const Tensor& g, const std::vector<ad::NodePtr>& ps) {
        const double* sp = ps[0]->value.data();
        const double* tp = ps[1]->value.data();
        const double* gv = g.data();
        if (ps[0]->requires_grad) {
          double* gs = ps[0]->grad.data();
          for (std::size_t p = 0; p < cells_s; ++p)
            for (std::size_t q = 0; q < cells_t; ++q) {
              const double gq = gv[p * cells_t + q];
              if (gq == 0.0) continue;
              const double* b = tp + q * d;
              double* a = gs + p * d;
              for (std::size_t k = 0; k < d; ++k) a[k] += gq * b[k];
            }
        }
        if (ps[1]->requires_grad) {
          double* gt = ps[1]->grad.data();
          for (std::size_t p = 0; p < cells_s; ++p)
            for (std::size_t q = 0; q < cells_t; ++q) {
              const double gq = gv[p * cells_t + q];
              if (gq == 0.0) continue;
              const double* a = sp + p * d;
              double* b = gt + q * d;
              for (std::size_t k = 0; k < d; ++k) b[k] += gq * a[k];
            }
        }
      });
}

ad::Var transpose_correlation_var(const ad::Var& c) {
  const Tensor& cv = c.value();
  if (cv.rank() != 4) throw ShapeError("transpose_correlation: input must be 4-D");
  const std::size_t h = cv.dim(0), w = cv.dim(1), h2 = cv.dim(2), w2 = cv.dim(3);
  const std::size_t cells_s = h * w, cells_t = h2 * w2;
  Tensor out({h2, w2, h, w});
  for (std::size_t p = 0; p < cells_s; ++p)
    for (std::size_t q = 0; q < cells_t; ++q) out[q * cells_s + p] = cv[p * cells_t + q];
  return ad::make_node(std::move(out), {c},
                       [cells_s, cells_t](const Tensor& g, const std::vector<ad::NodePtr>& ps) {
                         double* gc = ps[0]->grad.data();
                         const double* gv = g.data();
                         for (std::size_t q = 0; q < cells_t; ++q)
                           for (std::size_t p = 0; p < cells_s; ++p)
                             gc[p * cells_t + q] += gv[q * cells_s + p];
                       });
}

ad::Var flow_from_correlation_var(const ad::Var& combined, const MatchConfig& cfg) {
  if (cfg.mode == MatchMode::discrete)
    throw NumericError("flow_from_correlation_var: discrete mode has no gradient");
  check_match_config(cfg);
  const Tensor& cv = combined.value();
  if (cv.rank() != 4) throw ShapeError("flow_from_correlation_var: input must be 4-D");
  const std::size_t h = cv.dim(0), w = cv.dim(1), h2 = cv.dim(2), w2 = cv.dim(3);

  ad::Var n = ad::l2_normalize_rows(combined, 2);
  ad::Var scores = n;
  if (cfg.mode == MatchMode::kernel_soft) {
    // The gate is built from forward values only, entering the tape as a
    // constant: no gradient reaches the argmax location.
    Tensor k = argmax_kernel(n.value(), cfg.sigma, nullptr);
    scores = ad::mul(n, ad::Var::constant(std::move(k)));
  }
  ad::Var m = ad::softmax_rows(ad::scale(scores, cfg.beta), 2);
  ad::Var expectation =
      ad::matmul(ad::reshape(m, {h * w, h2 * w2}), ad::Var::constant(coord_table(h2, w2)));
  return ad::sub(ad::reshape(expectation, {h, w, 2}), ad::Var::constant(cell_coords(h, w)));
}

std::pair<ad::Var, ad::Var> match_var(const std::vector<ad::Var>& src_levels,
                                      const std::vector<ad::Var>& tgt_levels,
                                      const MatchConfig& cfg) {
  if (src_levels.empty() || src_levels.size() != tgt_levels.size())
    throw ShapeError("match: need the same nonzero number of feature levels per side");
  ad::Var combined;
  for (std::size_t l = 0; l < src_levels.size(); ++l) {
    ad::Var c = correlate_var(ad::l2_normalize_rows(src_levels[l], 2),
                              ad::l2_normalize_rows(tgt_levels[l], 2));
    combined = l == 0 ? c : ad::mul(combined, c);
  }
  return {flow_from_correlation_var(combined, cfg),
          flow_from_correlation_var(transpose_correlation_var(combined), cfg)};
}

FlowField flow_from_var(const ad::Var& flow) {
  const Tensor& v = flow.value();
  if (v.rank() != 3 || v.dim(2) != 2) throw ShapeError("flow_from_var: value must be (h,w,2)");
  FlowField f(v.dim(0), v.dim(1));
  for (std::size_t y = 0; y < f.h; ++y)
    for (std::size_t x = 0; x < f.w; ++x) {
      f.dx_at(y, x) = v.at3(y, x, 0);
      f.dy_at(y, x) = v.at3(y, x, 1);
    }
  return f;
}

}  // namespace semflow
