// Copyright 2026 The GMRL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "gmrl/gradcheck.hpp"
#include "gmrl/snapshot.hpp"
#include "gmrl/trainer.hpp"
#include "run_config.hpp"

namespace gmrl::cli {
namespace fs = std::filesystem;
using nlohmann::json;

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.input_len = 8;
  c.horizon = 2;
  c.locations = 3;
  c.sources = 2;
  c.layers = 2;
  c.components = 3;
  c.embed_dim = 4;
  c.channels = 8;
  c.memory_slots = 2;
  c.memory_dim = 6;
  c.dilations = {2, 4};
  c.lambda = 0.5;
  return c;
}

namespace {

struct Flags {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::string variant;
  std::string input;
  std::optional<std::uint64_t> seed;
  std::optional<Index> threads;
};

struct Context {
  std::string command;
  Flags flags;
  RunConfig cfg;
  fs::path dir;
  std::ostream& out;
  std::ostream& err;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string timestamp_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

// ---- data -------------------------------------------------------------------------

DataFormat format_for(const std::string& path, const std::string& setting) {
  if (setting == "csv") return DataFormat::kCsv;
  if (setting == "binary") return DataFormat::kBinary;
  return fs::path(path).extension() == ".csv" ? DataFormat::kCsv : DataFormat::kBinary;
}

TtsDataset read_dataset(const std::string& path, const std::string& format, const std::string& sidecar) {
  if (!fs::exists(path)) throw DataError("dataset not found: " + path);
  return load_dataset(path, format_for(path, format), sidecar);
}

TtsDataset configured_dataset(const RunConfig& cfg) {
  if (cfg.at("data", "synthetic").get<bool>()) return generate_synthetic(cfg.synth()).dataset;
  const std::string path = cfg.at("data", "path").get<std::string>();
  if (path.empty()) throw ConfigError("data.path is empty and data.synthetic is false");
  return read_dataset(path, cfg.at("data", "format").get<std::string>(),
                      cfg.at("data", "sidecar").get<std::string>());
}

Splits configured_splits(const RunConfig& cfg, Index steps) {
  SplitSpec s{cfg.at("data", "train_steps").get<Index>(), cfg.at("data", "val_steps").get<Index>(),
              cfg.at("data", "test_steps").get<Index>()};
  if (s.train == 0 && s.val == 0 && s.test == 0) {
    s = {steps * 7 / 10, steps / 10, steps - steps * 7 / 10 - steps / 10};
  }
  return resolve_splits(steps, s);
}

struct Prepared {
  TtsDataset raw;
  ModelConfig model;
  Splits splits;
  Tensor normalized;
  TrainingData training;
  std::vector<WindowedSample> test;
};

// Loads, splits and normalises the configured dataset. With `stats` the
// statistics come from a checkpoint instead of the training range.
Prepared prepare(const RunConfig& cfg, const NormStats* stats = nullptr, bool with_variant = true) {
  Prepared p;
  p.raw = configured_dataset(cfg);
  p.model = cfg.model(&p.raw, with_variant);
  p.splits = configured_splits(cfg, p.raw.steps());
  if (stats != nullptr) {
    p.training.stats = *stats;
    p.normalized = stats->normalize(p.raw.values);
  } else {
    ZScoreResult z = zscore(p.raw, p.splits.train, cfg.at("data", "per_source_norm").get<bool>());
    p.training.stats = z.stats;
    p.normalized = std::move(z.dataset.values);
  }
  p.training.source_ids = p.raw.source_ids;
  const Index t = p.model.input_len, o = p.model.horizon;
  if (stats == nullptr) {
    p.training.train = window(p.normalized, p.splits.train, t, o);
    p.training.val = window(p.normalized, p.splits.val, t, o);
  }
  if (p.splits.test.length() > 0) p.test = window(p.normalized, p.splits.test, t, o);
  return p;
}

// ---- diagnostics ------------------------------------------------------------------

void write_diagnostics(const fs::path& dir, const GmrlModel& model, const std::vector<WindowedSample>& samples,
                       const TtsDataset& labels, Index batch_size) {
  if (samples.empty()) return;
  const fs::path diag = dir / "diagnostics";
  fs::create_directories(diag);
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const Batch batch = make_batch(samples, order, 0, std::min<std::size_t>(samples.size(), batch_size));
  Graph g;
  const ForwardResult r = model.forward(g, batch.x);
  const ModelConfig& c = model.config();
  const Index ch = c.d_k(), l = c.locations, s = c.sources;

  std::ostringstream csv;
  csv << "layer,t,location,source,channel,cluster,before,after\n";
  for (std::size_t layer = 0; layer < r.mixture.size(); ++layer) {
    const GmOutput& gm = r.mixture[layer];
    write_json(diag / ("gmre_layer" + std::to_string(layer + 1) + ".json"),
               mixture_diagnostics(gm, c.components));
    // First sample only; positions run over (t, l, s).
    const Tensor& h_gm = gm.h_gm.value();
    const Tensor& h_hat = gm.h_hat.value();
    for (Index n = 0; n < c.input_len * l * s; ++n) {
      const Index t = n / (l * s), li = (n / s) % l, si = n % s;
      for (Index k = 0; k < ch; ++k) {
        csv << layer + 1 << ',' << t << ',' << labels.location_ids[li] << ',' << labels.source_ids[si] << ','
            << k << ',' << gm.posterior.assign[n * ch + k] << ',' << num(h_gm[n * 2 * ch + k]) << ','
            << num(h_hat[n * ch + k]) << '\n';
      }
    }
  }
  if (!r.mixture.empty()) write_text(diag / "cluster_norm.csv", csv.str());
  if (r.memory.phi.valid()) write_json(diag / "hra_phi.json", attention_diagnostics(r.memory));
}

void write_report(const fs::path& dir, const ForecastReport& report) {
  write_json(dir / "report.json", report.to_json());
  write_text(dir / "report.txt", report.to_text());
}

class HistoryWriter {
 public:
  HistoryWriter(const fs::path& path, std::ostream& log, std::string tag = {})
      : file_(path, std::ios::binary), log_(log), tag_(std::move(tag)) {
    if (!file_) throw DataError("cannot write " + path.string());
  }
  void operator()(const EpochRecord& r) {
    file_ << r.to_json().dump() << '\n';
    file_.flush();
    log_ << tag_ << "epoch " << r.epoch << " loss " << num(r.train_loss) << " val_mae " << num(r.val_mae) << '\n';
  }

 private:
  std::ofstream file_;
  std::ostream& log_;
  std::string tag_;
};

// ---- checkpoints -------------------------------------------------------------------

struct Restored {
  json manifest;
  NormStats stats;
};

json checkpoint_manifest(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  return read_manifest(path);
}

Restored restore(const Context& ctx, GmrlModel& model, json manifest) {
  const std::vector<std::string> diff = model_differences(manifest.at("model"), model.config().to_json());
  if (!diff.empty()) {
    std::string msg = "checkpoint and config disagree on model hyperparameters:";
    for (const std::string& d : diff) msg += "\n  model." + d + " (checkpoint != config)";
    throw ConfigError(msg);
  }
  load_parameters(ctx.flags.checkpoint, model);
  return {manifest, NormStats::from_json(manifest.at("norm"))};
}

// ---- commands ----------------------------------------------------------------------

int cmd_train(Context& ctx) {
  Prepared p = prepare(ctx.cfg);
  const TrainConfig tc = ctx.cfg.train();
  GmrlModel model(p.model);
  model.initialize(tc.seed);
  HistoryWriter history(ctx.dir / "history.jsonl", ctx.err);
  const TrainResult result = train(model, p.training, tc, std::ref(history));
  json run_config = ctx.cfg.resolved();
  run_config.erase("output");
  save_checkpoint(ctx.dir / "model.ckpt", model,
                  {{"run_config", run_config},
                   {"norm", p.training.stats.to_json()},
                   {"location_ids", p.raw.location_ids},
                   {"source_ids", p.raw.source_ids},
                   {"best_epoch", result.best_epoch},
                   {"best_val_mae", result.best_val_mae}});
  if (!p.test.empty()) {
    const ForecastReport report = evaluate(model, p.test, p.training.stats, p.raw.source_ids, tc.batch_size);
    write_report(ctx.dir, report);
    ctx.out << report.to_text();
  }
  if (ctx.cfg.at("output", "diagnostics").get<bool>()) {
    write_diagnostics(ctx.dir, model, p.test.empty() ? p.training.val : p.test, p.raw, tc.batch_size);
  }
  ctx.out << "best epoch " << result.best_epoch << ", validation MAE " << num(result.best_val_mae) << "\n"
          << "run directory " << ctx.dir.string() << "\n";
  return kOk;
}

int cmd_evaluate(Context& ctx) {
  json manifest = checkpoint_manifest(ctx.flags.checkpoint);
  const NormStats stats = NormStats::from_json(manifest.at("norm"));
  Prepared p = prepare(ctx.cfg, &stats);
  if (p.test.empty()) throw DataError("test split is empty");
  GmrlModel model(p.model);
  restore(ctx, model, manifest);
  const Index batch = ctx.cfg.train().batch_size;
  const ForecastReport report = evaluate(model, p.test, stats, p.raw.source_ids, batch);
  write_report(ctx.dir, report);
  if (ctx.cfg.at("output", "diagnostics").get<bool>()) write_diagnostics(ctx.dir, model, p.test, p.raw, batch);
  ctx.out << report.to_text();
  return kOk;
}

int cmd_forecast(Context& ctx) {
  json manifest = checkpoint_manifest(ctx.flags.checkpoint);
  const TtsDataset data = ctx.flags.input.empty()
                              ? configured_dataset(ctx.cfg)
                              : read_dataset(ctx.flags.input, ctx.cfg.at("data", "format").get<std::string>(),
                                             ctx.cfg.at("data", "sidecar").get<std::string>());
  GmrlModel model(ctx.cfg.model(&data));
  const Restored r = restore(ctx, model, manifest);
  if (manifest.contains("location_ids") &&
      (manifest["location_ids"] != data.location_ids || manifest["source_ids"] != data.source_ids)) {
    throw DataError("input locations/sources differ from the ones the checkpoint was trained on");
  }
  const ModelConfig& c = model.config();
  const Index steps = data.steps(), cells = c.locations * c.sources;
  if (steps < c.input_len) {
    throw DataError("input has " + std::to_string(steps) + " steps; the model needs " +
                    std::to_string(c.input_len));
  }
  const Tensor normalized = r.stats.normalize(data.values);
  Tensor x(Shape{1, c.input_len, c.locations, c.sources});
  const Index offset = (steps - c.input_len) * cells;
  for (Index i = 0; i < x.size(); ++i) x[i] = normalized[offset + i];
  const Tensor y = r.stats.denormalize(model.predict(x));

  const std::int64_t last = parse_timestamp(data.time_index.back());
  const std::int64_t step = steps > 1 ? last - parse_timestamp(data.time_index[steps - 2]) : 0;
  std::ostringstream csv;
  csv << "timestamp,location,source,value\n";
  json table = json::array();
  std::vector<std::string> stamps;
  for (Index o = 0; o < c.horizon; ++o) {
    stamps.push_back(format_timestamp(last + (o + 1) * step));
    json plane = json::array();
    for (Index l = 0; l < c.locations; ++l) {
      json row = json::array();
      for (Index s = 0; s < c.sources; ++s) {
        const double v = y[(o * c.locations + l) * c.sources + s];
        row.push_back(v);
        csv << stamps.back() << ',' << data.location_ids[l] << ',' << data.source_ids[s] << ',' << num(v) << '\n';
      }
      plane.push_back(row);
    }
    table.push_back(plane);
  }
  write_text(ctx.dir / "forecast.csv", csv.str());
  write_json(ctx.dir / "forecast.json", {{"timestamps", stamps},
                                         {"location_ids", data.location_ids},
                                         {"source_ids", data.source_ids},
                                         {"layout", "[horizon][location][source]"},
                                         {"values", table}});
  ctx.out << csv.str();
  return kOk;
}

int cmd_synth(Context& ctx) {
  const SynthSpec spec = ctx.cfg.synth();
  const SynthResult r = generate_synthetic(spec);
  {
    std::ofstream f(ctx.dir / "dataset.csv", std::ios::binary);
    write_csv(f, r.dataset);
  }
  save_binary(ctx.dir / "dataset.bin", r.dataset);
  std::ostringstream labels;
  labels << "location,source,component\n";
  for (Index l = 0; l < r.dataset.locations(); ++l) {
    for (Index s = 0; s < r.dataset.sources(); ++s) {
      labels << r.dataset.location_ids[l] << ',' << r.dataset.source_ids[s] << ','
             << r.labels[l * r.dataset.sources() + s] << '\n';
    }
  }
  write_text(ctx.dir / "labels.csv", labels.str());
  ctx.out << "wrote " << r.dataset.steps() << " x " << r.dataset.locations() << " x " << r.dataset.sources()
          << " dataset to " << ctx.dir.string() << "\n";
  return kOk;
}

int cmd_gradcheck(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const ModelConfig mc = cfg.at("gradcheck", "preset") == "tiny" ? tiny_model_config() : cfg.model();
  mc.validate();
  const std::uint64_t seed = cfg.at("gradcheck", "seed").get<std::uint64_t>();
  const Index batch = cfg.at("gradcheck", "batch").get<Index>();
  if (batch < 1) throw ConfigError("gradcheck.batch must be >= 1");
  GmrlModel model(mc);
  model.initialize(seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal;
  Tensor x(Shape{batch, mc.input_len, mc.locations, mc.sources});
  Tensor y(Shape{batch, mc.horizon, mc.locations, mc.sources});
  for (Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
  for (Index i = 0; i < y.size(); ++i) y[i] = normal(rng);

  std::uint64_t state = 0;
  GradCheckOptions opts;
  opts.delta = cfg.at("gradcheck", "delta").get<double>();
  opts.tolerance = cfg.at("gradcheck", "tolerance").get<double>();
  opts.max_entries_per_parameter = cfg.at("gradcheck", "max_entries").get<Index>();
  opts.seed = seed;
  opts.discrete_state = [&] { return state; };
  const GradCheckReport report = grad_check(
      [&](Graph& g) {
        auto [r, loss] = model.loss(g, x, y);
        state = r.discrete_state;
        return loss.total;
      },
      model.params(), opts);
  write_text(ctx.dir / "gradcheck.txt", report.to_text());
  ctx.out << report.to_text();
  return report.passed() ? kOk : kNumericError;
}

int cmd_ablate(Context& ctx) {
  Prepared p = prepare(ctx.cfg, nullptr, /*with_variant=*/false);
  if (p.test.empty()) throw DataError("test split is empty");
  const std::vector<std::string> suite = ctx.cfg.suite();
  std::map<std::string, std::unique_ptr<HistoryWriter>> writers;
  for (const std::string& v : suite) {
    fs::create_directories(ctx.dir / v);
    writers[v] = std::make_unique<HistoryWriter>(ctx.dir / v / "history.jsonl", ctx.err, v + ": ");
  }
  const std::vector<AblationRun> runs =
      run_ablation(suite, p.model, ctx.cfg.train(), p.training, p.test,
                   [&](const std::string& v, const EpochRecord& r) { (*writers.at(v))(r); });
  json summary = json::array();
  std::ostringstream csv;
  csv << "variant,mae,rmse,best_epoch,epochs,split_hash\n";
  for (const AblationRun& r : runs) {
    write_report(ctx.dir / r.variant, r.report);
    summary.push_back({{"variant", r.variant},
                       {"mae", r.report.mae()},
                       {"rmse", r.report.rmse()},
                       {"best_epoch", r.training.best_epoch},
                       {"epochs", r.training.history.size()},
                       {"split_hash", r.split_hash},
                       {"model", r.model.to_json()}});
    csv << r.variant << ',' << num(r.report.mae()) << ',' << num(r.report.rmse()) << ',' << r.training.best_epoch
        << ',' << r.training.history.size() << ',' << r.split_hash << '\n';
  }
  write_json(ctx.dir / "ablation.json", summary);
  write_text(ctx.dir / "ablation.csv", csv.str());
  ctx.out << csv.str();
  return kOk;
}

using Command = int (*)(Context&);

struct CommandInfo {
  const char* name;
  const char* help;
  Command run;
};

const std::vector<CommandInfo>& commands() {
  static const std::vector<CommandInfo> list{
      {"train", "train a model; writes checkpoint, history, test report", cmd_train},
      {"evaluate", "score a checkpoint on the test split", cmd_evaluate},
      {"forecast", "forecast the horizon after the last input window", cmd_forecast},
      {"synth", "generate a synthetic dataset with ground-truth labels", cmd_synth},
      {"gradcheck", "finite-difference check of every parameter gradient", cmd_gradcheck},
      {"ablate", "train and compare the configured variant suite", cmd_ablate},
  };
  return list;
}

// Builds the resolved config: defaults, then the config file (or the
// checkpoint's run config), then the environment, then flags.
RunConfig resolve(const std::string& command, const Flags& flags,
                  const std::function<const char*(const char*)>& getenv) {
  RunConfig cfg;
  if (!flags.config.empty()) {
    cfg.merge(read_json_file(flags.config), flags.config);
  } else if (!flags.checkpoint.empty() && (command == "evaluate" || command == "forecast")) {
    const json manifest = checkpoint_manifest(flags.checkpoint);
    if (manifest.contains("run_config")) cfg.merge(manifest["run_config"], flags.checkpoint + ".json");
  }
  cfg.merge_env(getenv);
  if (flags.seed) {
    const char* section = command == "synth" ? "synth" : command == "gradcheck" ? "gradcheck" : "train";
    cfg.set(section, "seed", *flags.seed);
  }
  if (flags.threads) cfg.set("runtime", "threads", *flags.threads);
  if (!flags.variant.empty()) {
    parse_variant(flags.variant);
    cfg.set("ablation", "variant", flags.variant);
  }
  if (!flags.out.empty()) cfg.set("output", "dir", flags.out);
  cfg.threads();
  return cfg;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
        const std::function<const char*(const char*)>& getenv) {
  CLI::App app{"Mixture-representation forecasting for multi-source tensor time series", "gmrl"};
  app.require_subcommand(1);
  app.footer(schema_help());
  Flags flags;
  std::string chosen;
  for (const CommandInfo& info : commands()) {
    CLI::App* sub = app.add_subcommand(info.name, info.help);
    sub->add_option("--config", flags.config, "JSON run config");
    sub->add_option("--checkpoint", flags.checkpoint, "model checkpoint (evaluate, forecast)");
    sub->add_option("--out", flags.out, "run directory (overrides output.dir)");
    sub->add_option("--seed", flags.seed, "seed for the command's section (train, synth or gradcheck)");
    sub->add_option("--threads", flags.threads, "worker threads (overrides runtime.threads)");
    sub->add_option("--variant", flags.variant, "model variant (overrides ablation.variant)");
    sub->add_option("--input", flags.input, "dataset whose last window is forecast (forecast)");
    sub->callback([&chosen, name = info.name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    const RunConfig cfg = resolve(chosen, flags, getenv);
    fs::path dir = cfg.at("output", "dir").get<std::string>();
    if (dir.empty()) dir = fs::path("runs") / (chosen + "-" + timestamp_now());
    fs::create_directories(dir);
    Context ctx{chosen, flags, cfg, dir, out, err};
    if (cfg.threads() > 1) err << "note: computation is single-threaded; running with one thread\n";
    write_json(dir / "config.json", cfg.resolved());
    for (const CommandInfo& info : commands()) {
      if (chosen == info.name) return info.run(ctx);
    }
    return kFailure;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace gmrl::cli
