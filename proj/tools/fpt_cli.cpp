#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fpt/cache.hpp"
#include "fpt/data.hpp"
#include "fpt/profile.hpp"
#include "fpt/train.hpp"
#include "fpt/weights_io.hpp"

namespace {

using namespace fpt;

struct CliError {
  int code;
  std::string msg;
};

// exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric
template <class F>
auto stage(int code, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError{code, e.what()};
  }
}

struct FullConfig {
  FptConfig fpt;
  TrainConfig train;
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t to_i64(const std::string& v, const std::string& key) {
  size_t pos = 0;
  long long r = 0;
  try {
    r = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw std::invalid_argument("config: bad integer '" + v + "' for " + key);
  return r;
}

uint64_t to_u64(const std::string& v, const std::string& key) {
  size_t pos = 0;
  unsigned long long r = 0;
  try {
    r = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw std::invalid_argument("config: bad unsigned integer '" + v + "' for " + key);
  return r;
}

double to_f64(const std::string& v, const std::string& key) {
  size_t pos = 0;
  double r = 0.0;
  try {
    r = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw std::invalid_argument("config: bad number '" + v + "' for " + key);
  return r;
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("config: bad boolean '" + v + "' for " + key);
}

void apply_key(FullConfig& c, const std::string& key, const std::string& value) {
  if (key == "lpm.layers") c.fpt.L_M = to_i64(value, key);
  else if (key == "lpm.dim") c.fpt.D_M = to_i64(value, key);
  else if (key == "lpm.heads") c.fpt.H = to_i64(value, key);
  else if (key == "lpm.patch") c.fpt.patch = to_i64(value, key);
  else if (key == "lpm.mlp_ratio") c.fpt.mlp_ratio = to_i64(value, key);
  else if (key == "side.layers") c.fpt.L_S = to_i64(value, key);
  else if (key == "side.k") c.fpt.k = to_i64(value, key);
  else if (key == "side.prompts") c.fpt.n_p = to_i64(value, key);
  else if (key == "side.token_ratio") c.fpt.token_ratio = to_f64(value, key);
  else if (key == "data.high_res") c.fpt.high_res = to_i64(value, key);
  else if (key == "data.low_res") c.fpt.low_res = to_i64(value, key);
  else if (key == "data.channels") c.fpt.channels = to_i64(value, key);
  else if (key == "data.classes") c.fpt.classes = to_i64(value, key);
  else if (key == "train.epochs") c.train.epochs = to_i64(value, key);
  else if (key == "train.batch_size") c.train.batch_size = to_i64(value, key);
  else if (key == "train.lr_max") c.train.lr_max = to_f64(value, key);
  else if (key == "train.weight_decay") c.train.weight_decay = to_f64(value, key);
  else if (key == "train.beta1") c.train.beta1 = to_f64(value, key);
  else if (key == "train.beta2") c.train.beta2 = to_f64(value, key);
  else if (key == "train.eps") c.train.eps = to_f64(value, key);
  else if (key == "train.seed") c.train.seed = to_u64(value, key);
  else if (key == "train.augment") c.train.augment = to_bool(value, key);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

FullConfig parse_config_file(const std::string& path) {
  FullConfig c;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument(path + ": cannot open config");
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                    ": expected key=value");
      apply_key(c, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }
  c.fpt.D_S = c.fpt.D_M / c.fpt.k;
  c.fpt.validate();
  c.train.validate();
  return c;
}

const Tensor& need_tensor(const std::map<std::string, Tensor>& named, const std::string& key) {
  auto it = named.find(key);
  if (it == named.end())
    throw std::invalid_argument("model file: missing tensor '" + key + "'");
  return it->second;
}

// the cache fingerprint plus the saved tensor shapes pin every config field
FptConfig config_from_artifacts(const CacheFingerprint& fp,
                                const std::map<std::string, Tensor>& named) {
  FptConfig cfg;
  cfg.high_res = fp.high_res;
  cfg.patch = fp.patch;
  cfg.L_M = fp.depth_m;
  cfg.L_S = fp.depth_s;
  cfg.D_M = fp.dim_m;
  cfg.H = fp.heads;
  cfg.token_ratio = fp.token_ratio;
  const Tensor& f_out = need_tensor(named, "side/f_out/w");
  if (f_out.rank() != 2 || f_out.dim(0) != cfg.D_M)
    throw std::invalid_argument("model file: f_out shape disagrees with the cache fingerprint");
  cfg.D_S = f_out.dim(1);
  if (cfg.D_S < 1 || cfg.D_M % cfg.D_S != 0)
    throw std::invalid_argument("model file: reduced width does not divide the LPM width");
  cfg.k = cfg.D_M / cfg.D_S;
  cfg.n_p = need_tensor(named, "side/fusion/00/prompts").dim(0);
  cfg.classes = need_tensor(named, "side/head/b").numel();
  const Tensor& pw = need_tensor(named, "side/patch_embed/w");
  if (pw.dim(0) % (cfg.patch * cfg.patch) != 0)
    throw std::invalid_argument("model file: patch embedding disagrees with the patch size");
  cfg.channels = pw.dim(0) / (cfg.patch * cfg.patch);
  const Tensor& pos = need_tensor(named, "side/pos");
  int64_t n_side_patch = pos.dim(0) - 1;
  int64_t g = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(n_side_patch))));
  if (g * g != n_side_patch)
    throw std::invalid_argument("model file: side position table is not a square grid");
  cfg.low_res = g * cfg.patch;
  cfg.mlp_ratio = need_tensor(named, "side/blocks/00/fc1/w").dim(1) / cfg.D_S;
  cfg.validate();
  return cfg;
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw CliError{3, "numeric failure: non-finite " + what};
}

int cmd_init(const std::string& config, const std::string& out, uint64_t seed) {
  FullConfig fc = stage(1, [&] { return parse_config_file(config); });
  ViTWeights lpm = ViTWeights::init(fc.fpt.lpm_config(), Rng(seed));
  stage(2, [&] { save_weights(out, lpm.named("lpm/")); return 0; });
  std::printf("wrote %lld lpm parameters to %s\n",
              static_cast<long long>(lpm.param_count()), out.c_str());
  return 0;
}

int cmd_synth(const std::string& out, int64_t n, int classes, int64_t high_res, uint64_t seed) {
  Dataset ds = stage(2, [&] { return synth_dataset(out, seed, n, classes, high_res); });
  std::printf("wrote %zu images (%d classes) to %s\n", ds.items.size(), ds.class_count,
              out.c_str());
  return 0;
}

int cmd_preload(const std::string& data, const std::string& weights, const std::string& config,
                const std::string& out, int batch, const std::string& random_out,
                uint64_t random_seed) {
  FullConfig fc = stage(1, [&] { return parse_config_file(config); });
  Dataset ds = stage(2, [&] { return load_dataset(data); });
  auto named = stage(2, [&] { return load_weights(weights); });
  ViTWeights lpm =
      stage(1, [&] { return ViTWeights::from_named(fc.fpt.lpm_config(), named, "lpm/"); });
  PreloadOptions opt;
  opt.batch = batch;
  opt.random_out = random_out;
  opt.random_seed = random_seed;
  PreloadResult res = stage(2, [&] { return preload(ds, lpm, fc.fpt, out, opt); });
  for (const auto& e : res.errors) std::cerr << "error: " << e << "\n";
  std::printf("cached %lld records to %s\n", static_cast<long long>(res.written), out.c_str());
  return res.errors.empty() ? 0 : 2;
}

int cmd_train(const std::string& data, const std::string& cache_path, const std::string& config,
              const std::string& out, const std::string& log, bool side_only) {
  FullConfig fc = stage(1, [&] { return parse_config_file(config); });
  Dataset ds = stage(2, [&] { return load_dataset(data); });
  std::optional<CacheFile> cache;
  if (!side_only) {
    if (cache_path.empty()) throw CliError{1, "train: --cache is required unless --side-only"};
    cache.emplace(stage(2, [&] { return CacheFile::open(cache_path); }));
    stage(1, [&] { cache->check_config(fc.fpt); return 0; });
    stage(2, [&] {
      for (const auto& item : ds.items)
        if ((item.split == "train" || item.split == "val" || item.split == "test") &&
            !cache->contains(item.file))
          throw std::runtime_error(cache_path + ": no record for '" + item.file + "'");
      return 0;
    });
  }
  FptModel model = FptModel::init(fc.fpt, fc.train.seed);
  TrainResult res = stage(
      3, [&] { return train_model(model, ds, cache ? &*cache : nullptr, fc.train, !side_only); });
  stage(2, [&] { write_metrics_csv(log, res.log); return 0; });
  stage(2, [&] { save_weights(out, res.best_params); return 0; });
  for (const auto& row : res.log) {
    require_finite(row.loss, "loss");
    require_finite(row.auc, "auc");
  }
  std::printf("best auc %.6f at epoch %lld; weights %s, log %s\n", res.best_auc,
              static_cast<long long>(res.best_epoch), out.c_str(), log.c_str());
  return 0;
}

int cmd_eval(const std::string& data, const std::string& cache_path,
             const std::string& model_path, const std::string& split) {
  CacheFile cache = stage(2, [&] { return CacheFile::open(cache_path); });
  auto named = stage(2, [&] { return load_weights(model_path); });
  FptConfig cfg = stage(1, [&] { return config_from_artifacts(cache.fingerprint(), named); });
  FptModel model = stage(1, [&] { return FptModel::from_named(cfg, named); });
  Dataset ds = stage(2, [&] { return load_dataset(data); });
  stage(2, [&] {
    for (size_t i : ds.split_indices(split))
      if (!cache.contains(ds.items[i].file))
        throw std::runtime_error(cache_path + ": no record for '" + ds.items[i].file + "'");
    return 0;
  });
  EvalResult ev = stage(3, [&] { return evaluate(model, ds, &cache, split, 16, true); });
  require_finite(ev.loss, "loss");
  require_finite(ev.auc, "auc");
  std::printf("split %s loss %.6f auc %.6f\n", split.c_str(), ev.loss, ev.auc);
  for (size_t c = 0; c < ev.per_class.size(); ++c)
    if (std::isfinite(ev.per_class[c]))
      std::printf("class %zu auc %.6f\n", c, ev.per_class[c]);
  return 0;
}

int cmd_profile(const std::string& config, const std::vector<double>& table1, double score,
                bool peaks) {
  if (!table1.empty()) {
    double p = stage(1, [&] { return ppe(table1[0], table1[1]); });
    double q = stage(1, [&] { return pme(table1[0], table1[2]); });
    std::printf("PPE %.2f\nPME %.2f\n", p, q);
    return 0;
  }
  FullConfig fc = stage(1, [&] { return parse_config_file(config); });
  FptModel model = FptModel::init(fc.fpt, 0);
  int64_t lpm_n = vit_param_count(fc.fpt.lpm_config());
  ParamCensus census = param_census(model, lpm_n);
  for (const auto& [name, n] : census.groups)
    std::printf("%-14s %12lld\n", name.c_str(), static_cast<long long>(n));
  std::printf("learnable      %12lld\ntotal          %12lld\nr              %.6f (%.2f%%)\n",
              static_cast<long long>(census.learnable), static_cast<long long>(census.total),
              census.ratio(), 100.0 * census.ratio());
  if (score > 0.0) std::printf("PPE(%.2f)     %12.2f\n", score, ppe(score, census.ratio()));
  if (peaks) {
    int64_t pm = stage(3, [&] { return fpt_step_peak(fc.fpt, 0); });
    int64_t pf = stage(3, [&] { return full_ft_step_peak(fc.fpt.lpm_config(),
                                                         static_cast<int>(fc.fpt.classes), 0); });
    double m = static_cast<double>(pm) / static_cast<double>(pf);
    std::printf("peak method    %12lld bytes\npeak full-ft   %12lld bytes\nm              %.6f\n",
                static_cast<long long>(pm), static_cast<long long>(pf), m);
    if (score > 0.0) std::printf("PME(%.2f)     %12.2f\n", score, pme(score, m));
  }
  return 0;
}

int cmd_viz(const std::string& image, const std::string& cache_path, const std::string& out,
            const std::string& model_path, int layer, const std::string& mask_out) {
  CacheFile cache = stage(2, [&] { return CacheFile::open(cache_path); });
  std::string id = image;
  if (!cache.contains(id)) id = std::filesystem::path(image).filename().string();
  if (!cache.contains(id)) throw CliError{2, cache_path + ": no record for '" + image + "'"};
  auto recs = stage(2, [&] { return cache.load_record(id); });
  int64_t L_S = cache.fingerprint().depth_s;
  if (layer == 0) layer = static_cast<int>(L_S);
  if (layer < 1 || layer > static_cast<int>(L_S))
    throw CliError{1, "viz: --layer must lie in 1.." + std::to_string(L_S)};
  const SelectedFeatures& sel = recs[static_cast<size_t>(layer - 1)];
  int64_t grid = cache.fingerprint().high_res / cache.fingerprint().patch;
  std::vector<float> mass;
  if (!model_path.empty()) {
    auto named = stage(2, [&] { return load_weights(model_path); });
    FptConfig cfg = stage(1, [&] { return config_from_artifacts(cache.fingerprint(), named); });
    FptModel model = stage(1, [&] { return FptModel::from_named(cfg, named); });
    mass = stage(3, [&] { return prompt_attention_mass(model, layer, sel, grid); });
  } else {
    mass = uniform_selection_mass(sel, grid);
  }
  stage(2, [&] { export_selection_map(mass, grid, out); return 0; });
  std::string mpath = mask_out.empty() ? out + ".mask.pgm" : mask_out;
  stage(2, [&] { export_selection_mask(sel, grid, mpath); return 0; });
  std::printf("wrote %s and %s (layer %d, %zu selected)\n", out.c_str(), mpath.c_str(), layer,
              sel.indices.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fine-grained prompt transfer: frozen high-res ViT + learnable side network"};
  app.require_subcommand(1);

  auto* init = app.add_subcommand("init", "initialize frozen backbone weights");
  std::string init_config, init_out;
  uint64_t init_seed = 0;
  init->add_option("--config", init_config, "key=value config file");
  init->add_option("--out", init_out, "output weights file")->required();
  init->add_option("--seed", init_seed, "rng seed");

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  std::string synth_out;
  int64_t synth_n = 100, synth_res = 256;
  int synth_classes = 2;
  uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--n", synth_n, "image count")->required();
  synth->add_option("--classes", synth_classes, "class count");
  synth->add_option("--high-res", synth_res, "image resolution");
  synth->add_option("--seed", synth_seed, "rng seed");

  auto* preload = app.add_subcommand("preload", "cache selected frozen features");
  std::string pre_data, pre_weights, pre_config, pre_out, pre_random_out;
  int pre_batch = 4;
  uint64_t pre_random_seed = 0;
  preload->add_option("--data", pre_data, "dataset directory")->required();
  preload->add_option("--weights", pre_weights, "frozen backbone weights")->required();
  preload->add_option("--config", pre_config, "key=value config file");
  preload->add_option("--out", pre_out, "output cache file")->required();
  preload->add_option("--batch", pre_batch, "images per frozen pass");
  preload->add_option("--random-out", pre_random_out,
                      "also write a random-selection cache here");
  preload->add_option("--random-seed", pre_random_seed, "seed for random selection");

  auto* train = app.add_subcommand("train", "train the side network");
  std::string tr_data, tr_cache, tr_config, tr_out, tr_log;
  bool tr_side_only = false;
  train->add_option("--data", tr_data, "dataset directory")->required();
  train->add_option("--cache", tr_cache, "feature cache file");
  train->add_option("--config", tr_config, "key=value config file");
  train->add_option("--out", tr_out, "output weights file")->required();
  train->add_option("--log", tr_log, "metrics csv path")->required();
  train->add_flag("--side-only", tr_side_only, "disable fusion (no cache needed)");

  auto* eval = app.add_subcommand("eval", "evaluate a trained model");
  std::string ev_data, ev_cache, ev_model, ev_split = "test";
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--cache", ev_cache, "feature cache file")->required();
  eval->add_option("--model", ev_model, "trained weights file")->required();
  eval->add_option("--split", ev_split, "dataset split");

  auto* profile = app.add_subcommand("profile", "efficiency accounting");
  std::string pf_config;
  std::vector<double> pf_table1;
  double pf_score = 0.0;
  bool pf_peaks = false;
  profile->add_option("--config", pf_config, "key=value config file");
  profile->add_option("--table1", pf_table1, "score r m -> print PPE and PME")->expected(3);
  profile->add_option("--score", pf_score, "score in [0,100] for PPE/PME");
  profile->add_flag("--peaks", pf_peaks, "measure one-step ledger peaks (slow)");

  auto* viz = app.add_subcommand("viz", "export token-selection rasters");
  std::string vz_image, vz_cache, vz_out, vz_model, vz_mask;
  int vz_layer = 0;
  viz->add_option("--image", vz_image, "image path or cache id")->required();
  viz->add_option("--cache", vz_cache, "feature cache file")->required();
  viz->add_option("--out", vz_out, "attention-mass raster (pgm)")->required();
  viz->add_option("--model", vz_model, "trained weights (graded attention mass)");
  viz->add_option("--layer", vz_layer, "side layer 1..L_S (default: last)");
  viz->add_option("--mask-out", vz_mask, "selection mask raster (default: OUT.mask.pgm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand(init)) return cmd_init(init_config, init_out, init_seed);
    if (app.got_subcommand(synth))
      return cmd_synth(synth_out, synth_n, synth_classes, synth_res, synth_seed);
    if (app.got_subcommand(preload))
      return cmd_preload(pre_data, pre_weights, pre_config, pre_out, pre_batch, pre_random_out,
                         pre_random_seed);
    if (app.got_subcommand(train))
      return cmd_train(tr_data, tr_cache, tr_config, tr_out, tr_log, tr_side_only);
    if (app.got_subcommand(eval)) return cmd_eval(ev_data, ev_cache, ev_model, ev_split);
    if (app.got_subcommand(profile)) return cmd_profile(pf_config, pf_table1, pf_score, pf_peaks);
    if (app.got_subcommand(viz))
      return cmd_viz(vz_image, vz_cache, vz_out, vz_model, vz_layer, vz_mask);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.msg << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
