// Full-system acceptance checks. Each criterion prints a single PASS/FAIL
// line with its wall time; the process exits nonzero when any line fails.
// Tolerances and runtime bounds are pinned inline next to each check.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fpt/adapter.hpp"
#include "fpt/cache.hpp"
#include "fpt/data.hpp"
#include "fpt/image.hpp"
#include "fpt/ops.hpp"
#include "fpt/profile.hpp"
#include "fpt/train.hpp"
#include "fpt/vit.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace fpt;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run_check(int idx, const char* name, const std::function<Outcome()>& fn) {
  double t0 = now_s();
  Outcome oc;
  try {
    oc = fn();
  } catch (const std::exception& e) {
    oc.pass = false;
    oc.detail = std::string("exception: ") + e.what();
  }
  double dt = now_s() - t0;
  if (!oc.pass) ++g_failures;
  std::printf("[%2d] %s  %-24s (%6.1fs)  %s\n", idx, oc.pass ? "PASS" : "FAIL", name,
              dt, oc.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

Tensor randt(Rng& rng, const std::vector<int64_t>& shape, float s = 0.5f) {
  Tensor t = Tensor::empty(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<float>(rng.uniform(-s, s));
  return t;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("file_bytes: cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string lpm_bytes(const ViTWeights& w) {
  std::string out;
  for (const auto& [name, t] : w.named("lpm/")) {
    out += name;
    out.append(reinterpret_cast<const char*>(t.data()),
               static_cast<size_t>(t.numel()) * sizeof(float));
  }
  return out;
}

// toy geometry shared by the gradient, cache, isolation and determinism checks
FptConfig toy_cfg() {
  FptConfig c;
  c.L_M = 4;
  c.L_S = 2;
  c.k = 4;
  c.n_p = 2;
  c.token_ratio = 0.2;
  c.high_res = 64;
  c.low_res = 32;
  c.D_M = 16;
  c.D_S = 4;
  c.H = 2;
  c.patch = 16;
  c.mlp_ratio = 2;
  c.channels = 3;
  c.classes = 2;
  return c;
}

std::vector<SelectedFeatures> rand_feats(const FptConfig& c, Rng& rng) {
  int64_t n_patch = (c.high_res / c.patch) * (c.high_res / c.patch);
  int64_t n_sel = c.n_sel(n_patch), d_h = c.D_M / c.H;
  std::vector<SelectedFeatures> out;
  for (int l : c.tapped_layers()) {
    SelectedFeatures sf;
    sf.layer_index = l;
    sf.indices = select_random(n_patch, c.token_ratio, rng.next_u64());
    sf.keys = randt(rng, {c.H, n_sel, d_h});
    sf.values = randt(rng, {c.H, n_sel, d_h});
    out.push_back(std::move(sf));
  }
  return out;
}

Tensor low_tensor(const Image& high, int64_t low_res) {
  return image_to_tensor(resize_area(high, low_res, low_res));
}

std::vector<SelectedFeatures> fresh_feats(const Image& high, const ViTWeights& lpm,
                                          const FptConfig& cfg) {
  Tensor t = image_to_tensor(high);
  auto taps = lpm_forward(t, lpm, cfg.tapped_layers());
  std::vector<SelectedFeatures> out;
  for (const auto& tap : taps) {
    auto scores = importance_scores_block(tap.attn.data(), cfg.H, tap.attn.dim(1), true);
    SelectedFeatures sf;
    sf.layer_index = tap.layer_index;
    sf.indices = select_important(scores, cfg.token_ratio);
    sf.keys = gather_selected(tap.keys, 0, cfg.H, sf.indices, true);
    sf.values = gather_selected(tap.values, 0, cfg.H, sf.indices, true);
    out.push_back(std::move(sf));
  }
  return out;
}

// best validation AUC of one seeded training run
double run_arm(const FptConfig& cfg, const Dataset& ds, const CacheFile* cache,
               bool fuse, uint64_t seed, int64_t epochs) {
  FptModel model = FptModel::init(cfg, seed);
  model.set_requires_grad(true);
  TrainConfig tc;
  tc.seed = seed;
  tc.epochs = epochs;
  TrainResult r = train_model(model, ds, cache, tc, fuse);
  return r.best_auc;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string join3(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += fmt("%s%.3f", s.empty() ? "" : "/", x);
  return s;
}

}  // namespace

int main() {
  fs::path work = fs::temp_directory_path() / "fpt_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  double t_start = now_s();

  // 1. efficiency metrics: five pinned score/ratio pairs, tolerance 0.01
  run_check(1, "efficiency metrics", [] {
    double t0 = now_s();
    struct Row {
      bool mem;
      double score, x, want;
    };
    const Row rows[] = {{false, 88.82, 1.0, 65.73},
                        {false, 87.12, 0.0103, 86.73},
                        {true, 87.12, 736.0 / 23128.0, 85.94},
                        {false, 83.28, 0.0001, 83.28},
                        {true, 83.28, 3416.0 / 23128.0, 78.44}};
    double worst = 0.0;
    for (const Row& r : rows) {
      double got = r.mem ? pme(r.score, r.x) : ppe(r.score, r.x);
      worst = std::max(worst, std::abs(got - r.want));
    }
    double dt = now_s() - t0;
    Outcome oc;
    oc.pass = worst <= 0.01 && dt < 1.0;
    oc.detail = fmt("max |err| %.4f (tol 0.01)", worst);
    return oc;
  });

  // 2. parameter budget: default config ratio in [0.73%, 1.33%], LPM near 86M
  run_check(2, "parameter budget", [] {
    double t0 = now_s();
    FptConfig cfg;
    FptModel model = FptModel::init(cfg, 0);
    int64_t lpm_total = vit_param_count(cfg.lpm_config());
    ParamCensus census = param_census(model, lpm_total);
    double r = census.ratio();
    double lpm_err = std::abs(static_cast<double>(lpm_total) - 86e6) / 86e6;
    double dt = now_s() - t0;
    Outcome oc;
    oc.pass = r >= 0.0073 && r <= 0.0133 && lpm_err <= 0.02 && dt < 10.0;
    oc.detail = fmt("learnable %lld, r %.4f%%, lpm %lld (%.2f%% off 86M)",
                    static_cast<long long>(census.learnable), 100.0 * r,
                    static_cast<long long>(lpm_total), 100.0 * lpm_err);
    return oc;
  });

  // 3. token arithmetic: patch counts at 224/512, selection 0.2 over 1024 -> 204
  run_check(3, "token arithmetic", [] {
    Outcome oc;
    ViTConfig vb;  // 224, P=16
    ViTWeights w224 = ViTWeights::init(vb, Rng(0));
    Rng rng(1);
    TokenSequence z224 = patchify(randt(rng, {224, 224, 3}), w224);
    int64_t patches224 = z224.tokens.dim(0) - (z224.has_class_token ? 1 : 0);
    vb.image_size = 512;
    ViTWeights w512 = ViTWeights::init(vb, Rng(0));
    TokenSequence z512 = patchify(randt(rng, {512, 512, 3}), w512);
    int64_t patches512 = z512.tokens.dim(0) - (z512.has_class_token ? 1 : 0);
    std::vector<float> scores(1024);
    for (auto& s : scores) s = static_cast<float>(rng.uniform());
    size_t n_sel = select_important(scores, 0.2).size();
    FptConfig fc;
    oc.pass = patches224 == 196 && patches512 == 1024 && n_sel == 204 &&
              fc.n_sel(1024) == 204;
    oc.detail = fmt("224^2 -> %lld, 512^2 -> %lld, sel(1024, 0.2) -> %zu",
                    static_cast<long long>(patches224),
                    static_cast<long long>(patches512), n_sel);
    return oc;
  });

  // 4. layer mapping: (12, 6) sends side layers 1..6 to 7..12
  run_check(4, "layer mapping", [] {
    Outcome oc;
    oc.pass = true;
    std::string got;
    for (int l = 1; l <= 6; ++l) {
      int m = side_layer_map(12, 6, l);
      if (m != 6 + l) oc.pass = false;
      got += fmt("%s%d", l == 1 ? "" : ",", m);
    }
    oc.detail = "1..6 -> " + got;
    return oc;
  });

  // 5. gradient suite: every differentiable op and the full side pass,
  //    central differences h=1e-3, atol 1e-4, rtol 2e-2, 20 seeds, >=98%
  run_check(5, "gradient suite", [] {
    double t0 = now_s();
    const double kH = 1e-3, kAtol = 1e-4, kRtol = 2e-2, kRate = 0.98;
    const int kSeeds = 20;
    std::vector<std::pair<std::string, GradResult>> table;
    auto add = [&](const std::string& name,
                   const std::function<GradResult(Rng&)>& one) {
      GradResult acc;
      for (int s = 0; s < kSeeds; ++s) {
        Rng rng(fnv1a(name) + static_cast<uint64_t>(s));
        GradResult r = one(rng);
        acc.total += r.total;
        acc.failed += r.failed;
        acc.worst = std::max(acc.worst, r.worst);
      }
      table.emplace_back(name, acc);
    };
    auto wsum = [](const Tensor& t, const Tensor& w) { return sum_all(mul(t, w)); };
    using testutil::gradcheck;

    add("matmul", [&](Rng& rng) {
      Tensor a = randt(rng, {3, 4}), b = randt(rng, {4, 5}), w = randt(rng, {3, 5});
      return gradcheck([&] { return wsum(matmul(a, b), w); }, {&a, &b}, kH, kAtol, kRtol);
    });
    add("linear", [&](Rng& rng) {
      Tensor x = randt(rng, {3, 4}), w = randt(rng, {4, 5}), b = randt(rng, {5});
      Tensor lw = randt(rng, {3, 5});
      return gradcheck([&] { return wsum(linear(x, w, b), lw); }, {&x, &w, &b}, kH,
                       kAtol, kRtol);
    });
    add("add", [&](Rng& rng) {
      Tensor a = randt(rng, {3, 4}), b = randt(rng, {3, 4}), w = randt(rng, {3, 4});
      return gradcheck([&] { return wsum(add(a, b), w); }, {&a, &b}, kH, kAtol, kRtol);
    });
    add("add_rows", [&](Rng& rng) {
      Tensor x = randt(rng, {6, 4}), e = randt(rng, {3, 4}), w = randt(rng, {6, 4});
      return gradcheck([&] { return wsum(add_rows(x, e), w); }, {&x, &e}, kH, kAtol,
                       kRtol);
    });
    add("scale", [&](Rng& rng) {
      Tensor x = randt(rng, {3, 4}), w = randt(rng, {3, 4});
      return gradcheck([&] { return wsum(scale(x, 1.7f), w); }, {&x}, kH, kAtol, kRtol);
    });
    add("mul", [&](Rng& rng) {
      Tensor a = randt(rng, {3, 4}), b = randt(rng, {3, 4}), w = randt(rng, {3, 4});
      return gradcheck([&] { return wsum(mul(a, b), w); }, {&a, &b}, kH, kAtol, kRtol);
    });
    add("layer_norm", [&](Rng& rng) {
      Tensor x = randt(rng, {4, 6}), g = randt(rng, {6}, 0.25f), b = randt(rng, {6});
      for (int64_t i = 0; i < 6; ++i) g.data()[i] += 1.0f;
      Tensor w = randt(rng, {4, 6});
      return gradcheck([&] { return wsum(layer_norm(x, g, b), w); }, {&x, &g, &b}, kH,
                       kAtol, kRtol);
    });
    add("gelu", [&](Rng& rng) {
      Tensor x = randt(rng, {3, 4}, 1.5f), w = randt(rng, {3, 4});
      return gradcheck([&] { return wsum(gelu(x), w); }, {&x}, kH, kAtol, kRtol);
    });
    add("softmax_rows", [&](Rng& rng) {
      Tensor x = randt(rng, {4, 5}, 1.5f), w = randt(rng, {4, 5});
      return gradcheck([&] { return wsum(softmax_rows(x), w); }, {&x}, kH, kAtol, kRtol);
    });
    add("softmax_rows_inplace", [&](Rng& rng) {
      Tensor x = randt(rng, {4, 5}, 1.5f), w = randt(rng, {4, 5});
      return gradcheck([&] { return wsum(softmax_rows_inplace(scale(x, 1.0f)), w); },
                       {&x}, kH, kAtol, kRtol);
    });
    add("sum_all", [&](Rng& rng) {
      Tensor x = randt(rng, {3, 4});
      return gradcheck([&] { return sum_all(x); }, {&x}, kH, kAtol, kRtol);
    });
    add("qkv_head", [&](Rng& rng) {
      Tensor x = randt(rng, {6, 18}), w = randt(rng, {4, 3, 3});
      int which = static_cast<int>(rng.uniform_int(3));
      return gradcheck([&] { return wsum(qkv_head(x, 2, 3, 2, which), w); }, {&x}, kH,
                       kAtol, kRtol);
    });
    add("split_heads", [&](Rng& rng) {
      Tensor x = randt(rng, {6, 6}), w = randt(rng, {4, 3, 3});
      return gradcheck([&] { return wsum(split_heads(x, 2, 3, 2), w); }, {&x}, kH,
                       kAtol, kRtol);
    });
    add("merge_heads", [&](Rng& rng) {
      Tensor x = randt(rng, {4, 3, 3}), w = randt(rng, {6, 6});
      return gradcheck([&] { return wsum(merge_heads(x, 2, 3, 2), w); }, {&x}, kH,
                       kAtol, kRtol);
    });
    add("bmm_nt", [&](Rng& rng) {
      Tensor a = randt(rng, {2, 3, 4}), b = randt(rng, {2, 5, 4});
      Tensor w = randt(rng, {2, 3, 5});
      return gradcheck([&] { return wsum(bmm_nt(a, b, 0.37f), w); }, {&a, &b}, kH,
                       kAtol, kRtol);
    });
    add("bmm_nn", [&](Rng& rng) {
      Tensor a = randt(rng, {2, 3, 5}), b = randt(rng, {2, 5, 4});
      Tensor w = randt(rng, {2, 3, 4});
      return gradcheck([&] { return wsum(bmm_nn(a, b), w); }, {&a, &b}, kH, kAtol,
                       kRtol);
    });
    add("repeat_rows", [&](Rng& rng) {
      Tensor x = randt(rng, {3, 4}), w = randt(rng, {6, 4});
      return gradcheck([&] { return wsum(repeat_rows(x, 2), w); }, {&x}, kH, kAtol,
                       kRtol);
    });
    add("concat_tokens", [&](Rng& rng) {
      Tensor a = randt(rng, {4, 4}), b = randt(rng, {6, 4}), w = randt(rng, {10, 4});
      return gradcheck([&] { return wsum(concat_tokens(a, 2, b, 3, 2), w); }, {&a, &b},
                       kH, kAtol, kRtol);
    });
    add("slice_tokens", [&](Rng& rng) {
      Tensor x = randt(rng, {8, 4}), w = randt(rng, {4, 4});
      return gradcheck([&] { return wsum(slice_tokens(x, 4, 2, 1, 2), w); }, {&x}, kH,
                       kAtol, kRtol);
    });
    add("cross_entropy", [&](Rng& rng) {
      Tensor x = randt(rng, {4, 3}, 1.5f);
      std::vector<int> labels = {0, 2, 1, 0};
      return gradcheck([&] { return cross_entropy(x, labels); }, {&x}, kH, kAtol,
                       kRtol);
    });
    add("side_forward", [&](Rng& rng) {
      FptConfig c = toy_cfg();
      FptModel model = FptModel::init(c, rng.next_u64());
      auto feats = rand_feats(c, rng);
      Tensor img = randt(rng, {c.low_res, c.low_res, c.channels});
      std::vector<int> labels = {1};
      return gradcheck(
          [&] { return cross_entropy(side_forward(img, feats, model), labels); },
          model.params(), kH, kAtol, kRtol);
    });

    Outcome oc;
    oc.pass = true;
    double min_rate = 1.0;
    std::string worst_op;
    int64_t total = 0;
    for (const auto& [name, r] : table) {
      total += r.total;
      if (r.pass_rate() < min_rate) {
        min_rate = r.pass_rate();
        worst_op = name;
      }
      if (r.pass_rate() < kRate) oc.pass = false;
    }
    double dt = now_s() - t0;
    if (dt >= 120.0) oc.pass = false;
    oc.detail = fmt("%zu ops x %d seeds, %lld elements, min rate %.4f (%s)",
                    table.size(), kSeeds, static_cast<long long>(total), min_rate,
                    worst_op.c_str());
    return oc;
  });

  // 6. frozen backbone isolation: 2-epoch run leaves the LPM bitwise intact;
  //    step graph size is independent of LPM depth
  run_check(6, "frozen backbone", [&work] {
    double t0 = now_s();
    FptConfig c12 = toy_cfg();
    c12.L_M = 12;
    FptConfig c24 = toy_cfg();
    c24.L_M = 24;
    Dataset ds = synth_dataset((work / "iso_ds").string(), 21, 32, 2, c12.high_res);

    ViTWeights lpm12 = synth_lpm(c12.lpm_config(), 3);
    std::string before = lpm_bytes(lpm12);
    fs::path cache12 = work / "iso12.fptc";
    PreloadResult pr = preload(ds, lpm12, c12, cache12.string());
    if (!pr.errors.empty()) throw std::runtime_error("preload errors");
    CacheFile cf12 = CacheFile::open(cache12.string());
    FptModel m12 = FptModel::init(c12, 5);
    m12.set_requires_grad(true);
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 9;
    train_model(m12, ds, &cf12, tc, true);
    bool frozen = lpm_bytes(lpm12) == before;

    ViTWeights lpm24 = synth_lpm(c24.lpm_config(), 3);
    fs::path cache24 = work / "iso24.fptc";
    preload(ds, lpm24, c24, cache24.string());
    CacheFile cf24 = CacheFile::open(cache24.string());

    auto step_nodes = [&ds](const FptConfig& cfg, const CacheFile& cf) {
      FptModel model = FptModel::init(cfg, 5);
      model.set_requires_grad(true);
      auto idx = ds.split_indices("train");
      std::vector<Tensor> lows;
      std::vector<std::vector<SelectedFeatures>> recs;
      std::vector<int> labels;
      for (size_t i = 0; i < 8; ++i) {
        Image high = load_image(ds.path_of(idx[i]));
        lows.push_back(low_tensor(high, cfg.low_res));
        recs.push_back(cf.load_record(ds.items[idx[i]].file));
        labels.push_back(ds.items[idx[i]].label);
      }
      std::vector<const Tensor*> imgs;
      std::vector<const std::vector<SelectedFeatures>*> feats;
      for (size_t i = 0; i < lows.size(); ++i) {
        imgs.push_back(&lows[i]);
        feats.push_back(&recs[i]);
      }
      RecordGuard rec;
      Tensor logits = side_forward_batched(imgs, feats, model, true);
      Tensor loss = cross_entropy(logits, labels);
      int64_t n = Graph::instance().size();
      Graph::instance().backward(loss);  // also clears the tape
      return n;
    };
    int64_t n12 = step_nodes(c12, cf12);
    int64_t n24 = step_nodes(c24, cf24);
    double dt = now_s() - t0;
    Outcome oc;
    oc.pass = frozen && n12 == n24 && n12 > 0 && dt < 120.0;
    oc.detail = fmt("lpm bytes %s, step nodes %lld vs %lld",
                    frozen ? "unchanged" : "CHANGED", static_cast<long long>(n12),
                    static_cast<long long>(n24));
    return oc;
  });

  // 7. cache equivalence: cached logits == fresh-LPM logits, bitwise, 56 images
  run_check(7, "cache equivalence", [&work] {
    double t0 = now_s();
    FptConfig cfg = toy_cfg();
    Dataset ds = synth_dataset((work / "eq_ds").string(), 31, 56, 2, cfg.high_res);
    ViTWeights lpm = synth_lpm(cfg.lpm_config(), 4);
    fs::path cache_path = work / "eq.fptc";
    PreloadResult pr = preload(ds, lpm, cfg, cache_path.string());
    if (!pr.errors.empty()) throw std::runtime_error("preload errors");
    CacheFile cache = CacheFile::open(cache_path.string());
    FptModel model = FptModel::init(cfg, 6);

    NoGradGuard ng;
    int64_t matched = 0;
    for (size_t i = 0; i < ds.items.size(); ++i) {
      Image high = load_image(ds.path_of(i));
      Tensor low = low_tensor(high, cfg.low_res);
      auto cached = cache.load_record(ds.items[i].file);
      Tensor a = side_forward(low, cached, model);
      auto fresh = fresh_feats(high, lpm, cfg);
      Tensor b = side_forward(low, fresh, model);
      if (a.numel() == b.numel() &&
          std::memcmp(a.data(), b.data(),
                      static_cast<size_t>(a.numel()) * sizeof(float)) == 0)
        ++matched;
    }
    double dt = now_s() - t0;
    Outcome oc;
    oc.pass = matched == static_cast<int64_t>(ds.items.size()) &&
              ds.items.size() >= 50 && dt < 60.0;
    oc.detail = fmt("%lld/%zu logit vectors bitwise equal",
                    static_cast<long long>(matched), ds.items.size());
    return oc;
  });

  // 8. memory envelope: adapter step < 25% of full fine-tune at 512; full
  //    fine-tune peaks strictly increase over {128, 256, 512}
  run_check(8, "memory envelope", [] {
    double t0 = now_s();
    FptConfig cfg;  // high_res 512
    int64_t adapter = fpt_step_peak(cfg, 0);
    ViTConfig vb = cfg.lpm_config();
    vb.image_size = 128;
    int64_t full128 = full_ft_step_peak(vb, static_cast<int>(cfg.classes), 0);
    vb.image_size = 256;
    int64_t full256 = full_ft_step_peak(vb, static_cast<int>(cfg.classes), 0);
    vb.image_size = 512;
    int64_t full512 = full_ft_step_peak(vb, static_cast<int>(cfg.classes), 0);
    double dt = now_s() - t0;
    double frac = static_cast<double>(adapter) / static_cast<double>(full512);
    Outcome oc;
    oc.pass = frac < 0.25 && full128 < full256 && full256 < full512 && dt < 120.0;
    oc.detail = fmt("step %.0f MB vs %.0f MB (%.1f%%); full-ft %.0f/%.0f/%.0f MB",
                    adapter / 1048576.0, full512 / 1048576.0, 100.0 * frac,
                    full128 / 1048576.0, full256 / 1048576.0, full512 / 1048576.0);
    return oc;
  });

  // 9/10 share one corpus, one frozen backbone and one preload pass
  fs::path c9_ds_dir = work / "c9_ds";
  fs::path imp_path = work / "c9_imp.fptc";
  fs::path rnd_path = work / "c9_rnd.fptc";
  std::vector<double> auc_imp, auc_side;
  const std::vector<uint64_t> kSeeds9 = {1, 2, 3, 4, 5};
  FptConfig cfg9;
  cfg9.high_res = 256;
  cfg9.low_res = 64;

  // 9. learnability: fused model reaches AUC >= 0.90 within 20 epochs on
  //    >= 4/5 seeds; side-only baseline trails the fused mean by >= 0.05
  run_check(9, "learnability", [&] {
    double t0 = now_s();
    Dataset ds = synth_dataset(c9_ds_dir.string(), 7, 640, 2, cfg9.high_res);
    ViTWeights lpm = synth_lpm(cfg9.lpm_config(), 0);
    PreloadOptions opt;
    opt.batch = 16;
    opt.random_out = rnd_path.string();
    opt.random_seed = 99;
    PreloadResult pr = preload(ds, lpm, cfg9, imp_path.string(), opt);
    if (!pr.errors.empty()) throw std::runtime_error("preload errors");
    CacheFile imp = CacheFile::open(imp_path.string());
    for (uint64_t s : kSeeds9) auc_imp.push_back(run_arm(cfg9, ds, &imp, true, s, 20));
    for (uint64_t s : kSeeds9)
      auc_side.push_back(run_arm(cfg9, ds, nullptr, false, s, 20));
    double dt = now_s() - t0;
    int hit = 0;
    for (double a : auc_imp) hit += a >= 0.90;
    double gap = mean_of(auc_imp) - mean_of(auc_side);
    Outcome oc;
    oc.pass = hit >= 4 && gap >= 0.05 && dt < 600.0;
    oc.detail = fmt("fused %s (%d/5 >= 0.90); side %s; gap %.3f", join3(auc_imp).c_str(),
                    hit, join3(auc_side).c_str(), gap);
    return oc;
  });

  // 10. selection strategy: important-token mean AUC >= random-token mean
  run_check(10, "selection strategy", [&] {
    Dataset ds = load_dataset(c9_ds_dir.string());
    CacheFile rnd = CacheFile::open(rnd_path.string());
    std::vector<double> auc_rnd;
    for (uint64_t s : kSeeds9) auc_rnd.push_back(run_arm(cfg9, ds, &rnd, true, s, 20));
    double mi = mean_of(auc_imp), mr = mean_of(auc_rnd);
    Outcome oc;
    oc.pass = !auc_imp.empty() && mi >= mr;
    oc.detail = fmt("important mean %.4f vs random mean %.4f (%s)", mi, mr,
                    join3(auc_rnd).c_str());
    fs::remove_all(c9_ds_dir);
    fs::remove(imp_path);
    fs::remove(rnd_path);
    return oc;
  });

  // 11. auc oracle: exact match with brute-force pair counting, 1000 instances
  run_check(11, "auc oracle", [] {
    Rng rng(77);
    int exact = 0;
    for (int t = 0; t < 1000; ++t) {
      int64_t n = 2 + rng.uniform_int(39);
      std::vector<float> scores(static_cast<size_t>(n));
      std::vector<int> labels(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        scores[static_cast<size_t>(i)] =
            static_cast<float>(rng.uniform_int(10)) / 10.0f;  // forced ties
        labels[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(2));
      }
      labels[0] = 0;  // both classes present
      labels[static_cast<size_t>(n - 1)] = 1;
      double wins = 0.0;
      int64_t pairs = 0;
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
          if (labels[static_cast<size_t>(i)] != 1 || labels[static_cast<size_t>(j)] != 0)
            continue;
          ++pairs;
          if (scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(j)])
            wins += 1.0;
          else if (scores[static_cast<size_t>(i)] == scores[static_cast<size_t>(j)])
            wins += 0.5;
        }
      double brute = wins / static_cast<double>(pairs);
      if (auc_binary(scores, labels) == brute) ++exact;
    }
    Outcome oc;
    oc.pass = exact == 1000;
    oc.detail = fmt("%d/1000 instances exactly equal", exact);
    return oc;
  });

  // 12. determinism: fixed seeds give byte-identical cache, metrics log and
  //     rasters across two independent end-to-end runs
  run_check(12, "determinism", [&work] {
    FptConfig cfg = toy_cfg();
    struct Artifacts {
      std::string cache, metrics, map, mask;
    };
    auto run_once = [&cfg](const fs::path& dir) {
      fs::create_directories(dir);
      Dataset ds = synth_dataset((dir / "ds").string(), 3, 24, 2, cfg.high_res);
      ViTWeights lpm = synth_lpm(cfg.lpm_config(), 5);
      fs::path cache_path = dir / "cache.fptc";
      PreloadResult pr = preload(ds, lpm, cfg, cache_path.string());
      if (!pr.errors.empty()) throw std::runtime_error("preload errors");
      CacheFile cache = CacheFile::open(cache_path.string());
      FptModel model = FptModel::init(cfg, 13);
      model.set_requires_grad(true);
      TrainConfig tc;
      tc.epochs = 2;
      tc.seed = 11;
      TrainResult r = train_model(model, ds, &cache, tc, true);
      write_metrics_csv((dir / "metrics.csv").string(), r.log);
      auto rec = cache.load_record(ds.items[0].file);
      int64_t grid = cfg.high_res / cfg.patch;
      auto mass = prompt_attention_mass(model, 1, rec[0], grid);
      export_selection_map(mass, grid, (dir / "map.pgm").string());
      export_selection_mask(rec[0], grid, (dir / "mask.pgm").string());
      Artifacts a;
      a.cache = file_bytes(cache_path);
      a.metrics = file_bytes(dir / "metrics.csv");
      a.map = file_bytes(dir / "map.pgm");
      a.mask = file_bytes(dir / "mask.pgm");
      return a;
    };
    Artifacts a = run_once(work / "det_a");
    Artifacts b = run_once(work / "det_b");
    bool cache_eq = a.cache == b.cache, metrics_eq = a.metrics == b.metrics;
    bool map_eq = a.map == b.map, mask_eq = a.mask == b.mask;
    Outcome oc;
    oc.pass = cache_eq && metrics_eq && map_eq && mask_eq && !a.cache.empty() &&
              !a.metrics.empty() && !a.map.empty() && !a.mask.empty();
    oc.detail = fmt("cache %s, metrics %s, map %s, mask %s", cache_eq ? "ok" : "DIFF",
                    metrics_eq ? "ok" : "DIFF", map_eq ? "ok" : "DIFF",
                    mask_eq ? "ok" : "DIFF");
    return oc;
  });

  std::printf("%d/12 criteria passed (%.1fs total)\n", 12 - g_failures,
              now_s() - t_start);
  fs::remove_all(work);
  return g_failures == 0 ? 0 : 1;
}
