#pragma once

// Acceptance-level checks shared by the unit tests and the acceptance binary.
// Each returns pass/fail plus a one-line detail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "hifusion/config.hpp"
#include "hifusion/dataset.hpp"
#include "hifusion/evaluation.hpp"
#include "hifusion/hism.hpp"
#include "hifusion/kernels/dense.hpp"
#include "hifusion/kernels/fusion.hpp"
#include "hifusion/kernels/norm.hpp"
#include "hifusion/model.hpp"
#include "hifusion/ops.hpp"
#include "hifusion/training.hpp"
#include "oracles.hpp"

namespace checks {

using namespace hifusion;
using oracle::Vec;

struct Result {
  bool pass = false;
  std::string detail;
};

template <class T>
std::span<const T> cs(const std::vector<T>& v) {
  return {v.data(), v.size()};
}
template <class T>
std::span<T> ms(std::vector<T>& v) {
  return {v.data(), v.size()};
}

inline Tensor to_tensor(const Shape& shape, const Vec& v) {
  return Tensor(shape, std::vector<float>(v.begin(), v.end()));
}

// ------------------------------------------------------------ formula oracles

struct OracleErrors {
  std::map<std::string, double> max_rel;  // formula -> worst relative error
  int instances = 0;
};

inline OracleErrors formula_oracle_errors(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(2, 9), cnt(0, 60);
  OracleErrors e;
  e.instances = instances;
  auto note = [&](const std::string& name, double err) {
    double& slot = e.max_rel[name];
    slot = std::max(slot, std::isnan(err) ? std::numeric_limits<double>::infinity() : err);
  };
  for (int it = 0; it < instances; ++it) {
    const int n = dim(rng), m = dim(rng);
    Eigen::MatrixXd counts(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) counts(i, j) = cnt(rng);
    note("normalize_expression",
         oracle::rel_error(oracle::flatten(normalize_expression(counts)), oracle::flatten(oracle::normalize(counts))));

    const Eigen::MatrixXd p = oracle::random_matrix(rng, n, m), t = oracle::random_matrix(rng, n, m);
    note("metric_mse", oracle::rel_error(metric_mse(p, t), oracle::mse(p, t)));
    note("metric_mae", oracle::rel_error(metric_mae(p, t), oracle::mae(p, t)));
    // at least 3 spots: with two, every r is +-1 and the gene mean can be exactly 0
    const Eigen::MatrixXd pp = oracle::random_matrix(rng, n + 1, m), tp = oracle::random_matrix(rng, n + 1, m);
    note("metric_pcc", oracle::rel_error(metric_pcc(pp, tp, PccAxis::kGene).mean, oracle::pcc_gene_mean(pp, tp)));
    note("main_loss", oracle::rel_error(main_loss(p, t), oracle::main_loss(p, t)));
    std::vector<Eigen::MatrixXd> aux;
    for (int s = 0; s < 1 + it % 4; ++s) aux.push_back(oracle::random_matrix(rng, n, m));
    note("aux_loss", oracle::rel_error(aux_loss(aux, t), oracle::aux_loss(aux, t)));

    // alignment over L levels of [B, d, h, w]
    const int L = 2 + it % 3, B = 1 + it % 3, d = dim(rng), h = 1 + it % 4;
    const std::size_t block = static_cast<std::size_t>(d) * h * h;
    std::vector<Vec> maps;
    for (int s = 0; s < L; ++s) maps.push_back(oracle::random_vec(rng, B * block));
    std::vector<std::span<const double>> views;
    for (const auto& mp : maps) views.push_back(cs(mp));
    for (const bool mean : {false, true}) {
      const auto red = mean ? kernels::Reduction::kMean : kernels::Reduction::kSum;
      note("alignment_loss", oracle::rel_error(kernels::alignment_loss_forward<double>(views, B, red),
                                               oracle::alignment(maps, B, mean)));
    }
    // HISM-level alignment on per-image feature maps (float storage, double arithmetic)
    std::vector<FeatureMap> fmaps;
    std::vector<Vec> first;
    for (int s = 0; s < L; ++s) {
      FeatureMap f(d, h, h);
      Vec exact;
      for (std::size_t i = 0; i < block; ++i) {
        f.tensor()[i] = static_cast<float>(maps[s][i]);
        exact.push_back(static_cast<double>(f.tensor()[i]));
      }
      fmaps.push_back(std::move(f));
      first.push_back(std::move(exact));
    }
    note("alignment_loss", oracle::rel_error(hism::alignment_loss(fmaps, kernels::Reduction::kMean),
                                             oracle::alignment(first, 1, true)));

    // cross-attention
    const int H = 1 + it % 4, dk = 1 + it % 3, D = H * dk, T = 1 + it % 6, Bq = 1 + it % 2;
    const Vec q = oracle::random_vec(rng, Bq * D), k = oracle::random_vec(rng, Bq * T * D),
              v = oracle::random_vec(rng, Bq * T * D), wq = oracle::random_vec(rng, D * D),
              wk = oracle::random_vec(rng, D * D), wv = oracle::random_vec(rng, D * D),
              wo = oracle::random_vec(rng, D * D);
    Vec out(Bq * D), w_oracle;
    kernels::AttentionCache<double> cache;
    kernels::attention_forward<double>(cs(q), cs(k), cs(v), cs(wq), cs(wk), cs(wv), cs(wo), {Bq, T, D, H}, ms(out),
                                       cache);
    note("cross_attention", oracle::rel_error(out, oracle::attention(q, k, v, wq, wk, wv, wo, Bq, T, D, H, &w_oracle)));
    note("cross_attention", oracle::rel_error(cache.weights, w_oracle));
  }
  return e;
}

inline Result formula_oracles(int instances = 100, std::uint64_t seed = 20240601) {
  const auto start = std::chrono::steady_clock::now();
  const OracleErrors e = formula_oracle_errors(instances, seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool ok = e.max_rel.size() == 8 && secs < 60;
  std::string worst;
  double w = 0;
  for (const auto& [name, err] : e.max_rel) {
    ok = ok && err < 1e-10;
    if (err >= w) w = err, worst = name;
  }
  return {ok, fmt::format("{} formulas x {} instances, worst rel err {:.2e} ({}), {:.1f}s", e.max_rel.size(),
                          instances, w, worst, secs)};
}

// ------------------------------------------------------------ gradient suite
// Toy shapes: d = 8, t = 4 tokens, m = 3 genes, 3 x 3 maps.

struct GradErrors {
  std::map<std::string, double> rel;
};

inline GradErrors gradient_errors(std::uint64_t seed) {
  constexpr int d = 8, t = 4, m = 3, hw = 9, B = 2, L = 3, H = 4;
  std::mt19937_64 rng(seed);
  GradErrors out;
  auto check = [&](const std::string& name, const Vec& analytic, const Vec& numeric) {
    out.rel[name] = std::max(out.rel[name], oracle::rel_error(analytic, numeric));
  };

  // L_align with respect to every level map. Entries are kept away from the |.| kink.
  {
    std::vector<Vec> maps(L);
    for (auto& mp : maps) mp = oracle::random_vec(rng, B * d * hw);
    for (int s = 1; s < L; ++s)
      for (std::size_t i = 0; i < maps[s].size(); ++i)
        if (std::abs(maps[s][i] - maps[0][i]) < 1e-2) maps[s][i] += 0.05;
    for (const auto red : {kernels::Reduction::kMean, kernels::Reduction::kSum}) {
      auto loss = [&](const std::vector<Vec>& mm) {
        std::vector<std::span<const double>> v;
        for (const auto& x : mm) v.push_back(cs(x));
        return kernels::alignment_loss_forward<double>(v, B, red);
      };
      std::vector<Vec> grads(L, Vec(B * d * hw, 0.0));
      std::vector<std::span<const double>> v;
      std::vector<std::span<double>> g;
      for (int s = 0; s < L; ++s) v.push_back(cs(maps[s])), g.push_back(ms(grads[s]));
      kernels::alignment_loss_backward<double>(v, B, red, 1.0, g);
      for (int s = 0; s < L; ++s) {
        auto f = [&](const Vec& x) {
          auto mm = maps;
          mm[s] = x;
          return loss(mm);
        };
        check("alignment_loss", grads[s], oracle::finite_difference(f, maps[s]));
      }
    }
  }

  // softmax-weighted fusion: alphas and maps, loss = <c, fused>
  {
    std::vector<Vec> maps(L);
    for (auto& mp : maps) mp = oracle::random_vec(rng, B * d * hw);
    const Vec alphas = oracle::random_vec(rng, L), c = oracle::random_vec(rng, B * d * hw);
    auto loss = [&](const std::vector<Vec>& mm, const Vec& a) {
      std::vector<std::span<const double>> v;
      for (const auto& x : mm) v.push_back(cs(x));
      Vec fused(B * d * hw);
      kernels::fuse_levels_forward<double>(v, cs(a), ms(fused));
      return std::inner_product(fused.begin(), fused.end(), c.begin(), 0.0);
    };
    std::vector<Vec> gmaps(L, Vec(B * d * hw, 0.0));
    Vec galpha(L, 0.0);
    std::vector<std::span<const double>> v;
    std::vector<std::span<double>> g;
    for (int s = 0; s < L; ++s) v.push_back(cs(maps[s])), g.push_back(ms(gmaps[s]));
    kernels::fuse_levels_backward<double>(v, cs(alphas), cs(c), g, ms(galpha));
    check("fusion_alphas", galpha, oracle::finite_difference([&](const Vec& a) { return loss(maps, a); }, alphas));
    for (int s = 0; s < L; ++s) {
      auto f = [&](const Vec& x) {
        auto mm = maps;
        mm[s] = x;
        return loss(mm, alphas);
      };
      check("fusion_maps", gmaps[s], oracle::finite_difference(f, maps[s]));
    }
  }

  // cross-attention projections and inputs, loss = <c, out>
  {
    std::map<std::string, Vec> x = {{"q", oracle::random_vec(rng, B * d)},
                                    {"k", oracle::random_vec(rng, B * t * d)},
                                    {"v", oracle::random_vec(rng, B * t * d)},
                                    {"wq", oracle::random_vec(rng, d * d)},
                                    {"wk", oracle::random_vec(rng, d * d)},
                                    {"wv", oracle::random_vec(rng, d * d)},
                                    {"wo", oracle::random_vec(rng, d * d)}};
    const Vec c = oracle::random_vec(rng, B * d);
    const kernels::AttentionShape shape{B, t, d, H};
    auto loss = [&](const std::map<std::string, Vec>& p) {
      Vec o(B * d);
      kernels::AttentionCache<double> cache;
      kernels::attention_forward<double>(cs(p.at("q")), cs(p.at("k")), cs(p.at("v")), cs(p.at("wq")),
                                         cs(p.at("wk")), cs(p.at("wv")), cs(p.at("wo")), shape, ms(o), cache);
      return std::inner_product(o.begin(), o.end(), c.begin(), 0.0);
    };
    Vec o(B * d);
    kernels::AttentionCache<double> cache;
    kernels::attention_forward<double>(cs(x["q"]), cs(x["k"]), cs(x["v"]), cs(x["wq"]), cs(x["wk"]), cs(x["wv"]),
                                       cs(x["wo"]), shape, ms(o), cache);
    std::map<std::string, Vec> g;
    for (const auto& [name, val] : x) g[name] = Vec(val.size(), 0.0);
    kernels::attention_backward<double>(cs(x["q"]), cs(x["k"]), cs(x["v"]), cs(x["wq"]), cs(x["wk"]), cs(x["wv"]),
                                        cs(x["wo"]), shape, cache, cs(c), ms(g["q"]), ms(g["k"]), ms(g["v"]),
                                        ms(g["wq"]), ms(g["wk"]), ms(g["wv"]), ms(g["wo"]));
    for (const auto& [name, val] : x) {
      auto f = [&, name = name](const Vec& xv) {
        auto p = x;
        p[name] = xv;
        return loss(p);
      };
      check("attention_" + name, g[name], oracle::finite_difference(f, val));
    }
  }

  // LayerNorm + FC head into the main loss
  {
    std::map<std::string, Vec> x = {{"x", oracle::random_vec(rng, B * d)},
                                    {"gamma", oracle::random_vec(rng, d, 0.5, 1.5)},
                                    {"beta", oracle::random_vec(rng, d)},
                                    {"w", oracle::random_vec(rng, m * d)},
                                    {"b", oracle::random_vec(rng, m)}};
    const Vec target = oracle::random_vec(rng, B * m);
    constexpr double eps = 1e-5;
    auto loss = [&](const std::map<std::string, Vec>& p) {
      Vec y(B * d), pred(B * m);
      kernels::layer_norm_forward<double>(cs(p.at("x")), B, d, cs(p.at("gamma")), cs(p.at("beta")), eps, ms(y));
      kernels::linear_forward<double>(cs(y), B, d, m, cs(p.at("w")), cs(p.at("b")), ms(pred));
      return kernels::mean_sq_norm<double>(cs(pred), cs(target), B);
    };
    Vec y(B * d), pred(B * m), gpred(B * m, 0.0), gy(B * d, 0.0);
    std::map<std::string, Vec> g;
    for (const auto& [name, val] : x) g[name] = Vec(val.size(), 0.0);
    kernels::layer_norm_forward<double>(cs(x["x"]), B, d, cs(x["gamma"]), cs(x["beta"]), eps, ms(y));
    kernels::linear_forward<double>(cs(y), B, d, m, cs(x["w"]), cs(x["b"]), ms(pred));
    kernels::mean_sq_norm_backward<double>(cs(pred), cs(target), B, 1.0, ms(gpred));
    kernels::linear_backward<double>(cs(y), B, d, m, cs(x["w"]), cs(gpred), ms(gy), ms(g["w"]), ms(g["b"]));
    kernels::layer_norm_backward<double>(cs(x["x"]), B, d, cs(x["gamma"]), eps, cs(gy), ms(g["x"]), ms(g["gamma"]),
                                         ms(g["beta"]));
    for (const auto& [name, val] : x) {
      auto f = [&, name = name](const Vec& xv) {
        auto p = x;
        p[name] = xv;
        return loss(p);
      };
      check("head_" + name, g[name], oracle::finite_difference(f, val));
    }
  }
  return out;
}

inline Result gradient_suite(std::uint64_t seed = 11) {
  const auto start = std::chrono::steady_clock::now();
  GradErrors e;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto one = gradient_errors(seed + s);
    for (const auto& [k, v] : one.rel) e.rel[k] = std::max(e.rel[k], v);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool ok = secs < 120;
  double worst = 0;
  std::string which;
  for (const auto& [k, v] : e.rel) {
    ok = ok && v < 1e-5;
    if (v >= worst) worst = v, which = k;
  }
  return {ok, fmt::format("{} gradients, worst rel err {:.2e} ({}), {:.1f}s", e.rel.size(), worst, which, secs)};
}

// ------------------------------------------------------------ shapes at the default settings

inline Result default_shapes() {
  const auto start = std::chrono::steady_clock::now();
  const Config cfg;  // spot 224, levels {1,2,7}, resnet-18 d = 512, k = 2, 250 genes
  HiFusionModel model(cfg.model, cfg.data.top_genes, 0);
  ag::NoGradGuard guard;
  nn::Rng rng(3);
  const Tensor spots = nn::uniform({1, 3, 224, 224}, 1.0f, rng);
  const Tensor neighbors = nn::uniform({1, 3, 448, 448}, 1.0f, rng);
  std::vector<std::string> problems;
  auto expect = [&](const std::string& what, const Shape& got, const Shape& want) {
    if (got != want) problems.push_back(fmt::format("{} {} != {}", what, shape_str(got), shape_str(want)));
  };
  const hism::HismOutput h =
      hism::hism_forward(ag::Var::constant(spots), model.spot_encoder(), cfg.model.level_spec(),
                         cfg.model.reduction(), false);
  if (h.maps.size() != 3) problems.push_back(fmt::format("{} level maps", h.maps.size()));
  for (std::size_t s = 0; s < h.maps.size(); ++s) expect(fmt::format("level {}", s), h.maps[s].shape(), {1, 512, 7, 7});
  const ag::Var fused = ops::fuse_levels(h.maps, model.alphas());
  expect("tokens", ccf::tokens_from_fused(fused, cfg.model.k).shape(), {1, 4, 512});
  const ModelOutput out = model.forward(ag::Var::constant(spots), ag::Var::constant(neighbors), false);
  expect("prediction", out.prediction.shape(), {1, 250});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs >= 60) problems.push_back(fmt::format("took {:.1f}s", secs));
  std::string detail = problems.empty() ? "maps 3 x [1,512,7,7], tokens [1,4,512], prediction [1,250]" : "";
  for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  return {problems.empty(), fmt::format("{}, {:.1f}s", detail, secs)};
}

// ------------------------------------------------------------ invariants

inline std::vector<SlideRecord> random_slides(std::mt19937_64& rng, int patients, int max_layers) {
  std::uniform_int_distribution<int> layers(2, max_layers);
  std::vector<SlideRecord> slides;
  for (int p = 0; p < patients; ++p) {
    const int L = layers(rng);
    for (int l = 0; l < L; ++l) {
      SlideRecord s;
      s.patient_id = fmt::format("Q{:03d}", (p * 37 + 11) % 1000);
      s.layer_index = l;
      s.slide_id = fmt::format("{}_{}", s.patient_id, l);
      slides.push_back(s);
    }
  }
  std::shuffle(slides.begin(), slides.end(), rng);
  return slides;
}

// Empty string when the plan is consistent with the slides.
inline std::string split_violation(const std::vector<SlideRecord>& slides, const SplitPlan& plan) {
  std::map<std::string, const SlideRecord*> by_id;
  std::set<std::string> patients;
  for (const auto& s : slides) by_id[s.slide_id] = &s, patients.insert(s.patient_id);
  std::map<std::string, int> tested;
  for (const auto& f : plan.folds) {
    std::set<std::string> tr(f.train_slides.begin(), f.train_slides.end());
    for (const auto& s : f.test_slides) {
      if (tr.count(s)) return f.name + ": slide in both train and test";
      ++tested[s];
    }
    if (tr.empty() || f.test_slides.empty()) return f.name + ": empty side";
    if (plan.protocol == Protocol::kSlideWiseCv) {
      std::set<std::string> trp, tep;
      for (const auto& s : f.train_slides) trp.insert(by_id.at(s)->patient_id);
      for (const auto& s : f.test_slides) tep.insert(by_id.at(s)->patient_id);
      for (const auto& p : tep)
        if (trp.count(p)) return f.name + ": patient " + p + " on both sides";
      if (trp.size() + tep.size() != patients.size()) return f.name + ": patients missing";
    } else {
      for (const auto& s : f.train_slides)
        if (by_id.at(s)->layer_index != 0 || by_id.at(s)->patient_id != f.name) return f.name + ": bad train slide";
      for (const auto& s : f.test_slides)
        if (by_id.at(s)->layer_index == 0 || by_id.at(s)->patient_id != f.name) return f.name + ": bad test slide";
    }
  }
  if (plan.protocol == Protocol::kSlideWiseCv) {
    if (tested.size() != slides.size()) return "some slide never tested";
    for (const auto& [s, c] : tested)
      if (c != 1) return s + " tested " + std::to_string(c) + " times";
  } else if (plan.folds.size() != patients.size()) {
    return "3d needs one fold per patient";
  }
  return "";
}

inline Result split_fuzz(int cases = 1000, std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pat(1, 16), lay(2, 5), folds(2, 6);
  int checked = 0;
  for (int c = 0; c < cases; ++c) {
    const int P = pat(rng);
    const auto slides = random_slides(rng, P, lay(rng));
    const bool two_d = c % 2 == 0 && P >= 2;
    const int F = two_d ? std::min(P, folds(rng)) : 0;
    const Protocol proto = two_d ? Protocol::kSlideWiseCv : Protocol::kSampleSpecific3d;
    const auto plan = make_splits(slides, proto, F, rng());
    if (auto v = split_violation(slides, plan); !v.empty())
      return {false, fmt::format("case {} ({} patients, {}): {}", c, P, two_d ? "2d" : "3d", v)};
    ++checked;
  }
  return {true, fmt::format("{} random patient/layer configurations", checked)};
}

inline Result invariants(std::uint64_t seed = 9) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> fails;
  auto fail = [&](std::string s) { fails.push_back(std::move(s)); };

  // softmax fusion weights
  for (int i = 0; i < 200; ++i) {
    const Vec a = oracle::random_vec(rng, 1 + i % 5, -20, 20);
    const auto w = kernels::softmax<double>(cs(a));
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    if (std::abs(sum - 1) > 1e-12 || *std::min_element(w.begin(), w.end()) < 0) {
      fail("softmax weights do not sum to 1");
      break;
    }
  }

  // attention rows and token-permutation behaviour
  for (int i = 0; i < 100; ++i) {
    const int B = 2, T = 2 + i % 6, H = 1 + i % 4, D = H * 3;
    const Vec q = oracle::random_vec(rng, B * D), k = oracle::random_vec(rng, B * T * D),
              v = oracle::random_vec(rng, B * T * D), wq = oracle::random_vec(rng, D * D),
              wk = oracle::random_vec(rng, D * D), wv = oracle::random_vec(rng, D * D),
              wo = oracle::random_vec(rng, D * D);
    kernels::AttentionCache<double> c1, c2;
    Vec o1(B * D), o2(B * D);
    kernels::attention_forward<double>(cs(q), cs(k), cs(v), cs(wq), cs(wk), cs(wv), cs(wo), {B, T, D, H}, ms(o1), c1);
    for (int row = 0; row < B * H; ++row) {
      double s = 0;
      for (int j = 0; j < T; ++j) s += c1.weights[row * T + j];
      if (std::abs(s - 1) > 1e-12) fail("attention row does not sum to 1");
    }
    std::vector<int> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Vec kp(k.size()), vp(v.size());
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < T; ++j)
        for (int e = 0; e < D; ++e) {
          kp[(b * T + j) * D + e] = k[(b * T + perm[j]) * D + e];
          vp[(b * T + j) * D + e] = v[(b * T + perm[j]) * D + e];
        }
    kernels::attention_forward<double>(cs(q), cs(kp), cs(vp), cs(wq), cs(wk), cs(wv), cs(wo), {B, T, D, H}, ms(o2), c2);
    if (oracle::rel_error(o2, o1) > 1e-12) fail("attention output changes under token permutation");
    for (int row = 0; row < B * H; ++row)
      for (int j = 0; j < T; ++j)
        if (std::abs(c2.weights[row * T + j] - c1.weights[row * T + perm[j]]) > 1e-12) {
          fail("attention weights are not permuted with the tokens");
          row = B * H;
          break;
        }
  }

  // tiling inverse, tensor and pixel level
  nn::Rng nrng(seed);
  for (int g : {1, 2, 4, 7}) {
    const Tensor x = nn::uniform({2, 3, 7 * g, 5 * g}, 1.0f, nrng);
    const ag::Var v = ag::Var::constant(x);
    const Tensor back = ops::tile_merge(ops::tile_split(v, g), g).value();
    if (back.storage() != x.storage()) fail(fmt::format("tile_merge(tile_split(x, {0}), {0}) != x", g));
    Image img(56, 56);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& p : img.pixels) p = u(nrng);
    const auto tiles = hism::decompose(img, g);
    if (!(hism::reassemble_pixels(tiles, g) == img)) fail(fmt::format("pixel reassembly differs at g = {}", g));
  }

  // sum_j exp(y_ij) = 1 after normalization
  for (int i = 0; i < 50; ++i) {
    Eigen::MatrixXd counts = (oracle::random_matrix(rng, 5, 2 + i % 9, 0, 80)).array().round().matrix();
    const Eigen::MatrixXd y = normalize_expression(counts);
    for (int r = 0; r < y.rows(); ++r)
      if (std::abs(y.row(r).array().exp().sum() - 1) > 1e-12) {
        fail("sum exp of a normalized row is not 1");
        break;
      }
  }

  const Result fuzz = split_fuzz();
  if (!fuzz.pass) fail(fuzz.detail);
  std::string detail = fails.empty() ? "softmax, attention rows, token permutation, tiling inverse, sum-exp, " + fuzz.detail
                                     : fails.front();
  return {fails.empty(), detail};
}

// ------------------------------------------------------------ learning

// The configuration the learning checks train with.
inline Config learning_config() {
  Config c = Config::desk();
  c.data.top_genes = 8;
  return c;
}

inline Result overfit_single_batch(int steps = 100, int batch = 8) {
  SynthConfig sc;  // 4 x 3 x 64, 8 genes, seed 7
  const Dataset data = synthesize_dataset(sc);
  const Config cfg = learning_config();
  const ExpressionMatrix norm = normalize_expression(data.counts);
  const SpotSet all = make_spot_set(data, {data.slides[0].slide_id}, norm, data.counts.gene_names);
  std::vector<int> idx(batch);
  std::iota(idx.begin(), idx.end(), 0);
  const SpotSet one = all.subset(idx);
  HiFusionModel model(cfg.model, one.targets.cols(), 1);
  TrainConfig tc = cfg.train;
  tc.epochs = steps;
  tc.batch_size = batch;
  const TrainResult r = train(model, one, nullptr, tc);
  const double first = r.steps.front().loss.total;
  double best = first;
  long at = 0;
  for (const auto& s : r.steps)
    if (s.loss.total < best) best = s.loss.total, at = s.step;
  const bool ok = static_cast<int>(r.steps.size()) == steps && best < 0.05 * first;
  return {ok, fmt::format("total loss {:.4f} -> {:.4f} ({:.2f}% of initial, step {})", first, best,
                          100 * best / first, at)};
}

inline double read_threshold(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) return std::numeric_limits<double>::quiet_NaN();
  return nlohmann::json::parse(in).at("threshold").get<double>();
}

inline Result protocol_3d_pcc(double threshold) {
  const auto start = std::chrono::steady_clock::now();
  const Dataset data = synthesize_dataset(SynthConfig{});
  const Config cfg = learning_config();
  const SplitPlan plan = make_splits(data.slides, Protocol::kSampleSpecific3d, 0, 0);
  ProtocolOptions opts;
  opts.top_genes = cfg.data.top_genes;
  const ProtocolReport r = run_protocol(hifusion_factory(cfg), data, plan, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = r.average.pcc > threshold && secs < 600;
  return {ok, fmt::format("held-out layer PCC {:.4f} vs threshold {:.2f}, MSE {:.4f}, {:.0f}s", r.average.pcc,
                          threshold, r.average.mse, secs)};
}

// ------------------------------------------------------------ trend

struct TrendRow {
  std::uint64_t seed;
  double mse_3d, mse_2d;
};

inline Config trend_config() {
  Config c = learning_config();
  c.train.epochs = 20;
  return c;
}

inline SynthConfig trend_data(std::uint64_t seed) {
  SynthConfig s;
  s.seed = seed;
  s.spots_per_slide = 32;
  s.style_shift = 0.6;
  return s;
}

inline TrendRow trend_seed(std::uint64_t seed, const std::function<void(const std::string&)>& progress = {}) {
  const Dataset data = synthesize_dataset(trend_data(seed));
  Config cfg = trend_config();
  cfg.train.seed = static_cast<int>(seed);
  ProtocolOptions opts;
  opts.top_genes = cfg.data.top_genes;
  opts.progress = progress;
  const auto r3 = run_protocol(hifusion_factory(cfg), data, make_splits(data.slides, Protocol::kSampleSpecific3d, 0, 0), opts);
  const auto r2 =
      run_protocol(hifusion_factory(cfg), data, make_splits(data.slides, Protocol::kSlideWiseCv, 4, seed), opts);
  return {seed, r3.average.mse, r2.average.mse};
}

// ------------------------------------------------------------ ablation completeness

inline std::string table_problem(const AblationTable& t, int genes) {
  for (const auto& row : t.rows) {
    const auto& a = row.report.average;
    if (!std::isfinite(a.mse) || !std::isfinite(a.mae) || a.n_spots <= 0 ||
        static_cast<int>(a.genes.size()) != genes || row.report.per_patient.empty())
      return t.axis + " / " + row.label + ": malformed report";
    const auto j = t.to_json();
    if (j.at("rows").size() != t.rows.size()) return t.axis + ": json row count";
  }
  return "";
}

inline std::vector<std::string> labels(const std::string& axis, const Config& base) {
  std::vector<std::string> out;
  for (const auto& v : ablation_values(axis, base)) out.push_back(v.label);
  return out;
}

// Row sets each axis must produce.
inline std::map<std::string, std::vector<std::string>> expected_ablation_rows(int spot_size) {
  std::vector<std::string> n;
  for (int i = 1; i <= 5; ++i) n.push_back(fmt::format("{0}x{0}", spot_size * i));
  return {
      {"levels",
       {"1x1", "1x1 + 2x2", "1x1 + 4x4", "1x1 + 7x7", "1x1 + 2x2 + 4x4", "1x1 + 2x2 + 7x7", "1x1 + 4x4 + 7x7",
        "1x1 + 2x2 + 4x4 + 7x7"}},
      {"feature_alignment", {"w/o alignment", "w/ alignment"}},
      {"token_k", {"2x2", "3x3", "4x4", "5x5", "6x6", "7x7"}},
      {"neighbor_N", n},
      {"region_branch", {"on", "off"}},
      {"fusion_mode", {"attention", "additive"}},
      {"qk_reversed", {"none", "ccf", "input"}},
      {"variants",
       {"HiFusion (full)", "w/o Region Branch", "CCF (Additive)", "Q/K Reversed (CCF)", "Q/K Reversed (Input)"}},
  };
}

}  // namespace checks
