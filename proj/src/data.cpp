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

#include "gmrl/data.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "gmrl/snapshot.hpp"

namespace gmrl {
namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_int(const std::string& text, std::size_t pos, std::size_t len) {
  int v = 0;
  const char* first = text.data() + pos;
  auto [ptr, ec] = std::from_chars(first, first + len, v);
  if (ec != std::errc() || ptr != first + len) throw DataError("malformed timestamp '" + text + "'");
  return v;
}

void check_time_axis(const std::vector<std::string>& time_index) {
  std::int64_t prev = 0;
  std::int64_t spacing = 0;
  for (std::size_t i = 0; i < time_index.size(); ++i) {
    const std::int64_t t = parse_timestamp(time_index[i]);
    if (i > 0) {
      if (t <= prev) {
        throw DataError("timestamps not strictly increasing at step " + std::to_string(i) + " ('" +
                        time_index[i] + "')");
      }
      if (i == 1) {
        spacing = t - prev;
      } else if (t - prev != spacing) {
        throw DataError("timestamps not equally spaced at step " + std::to_string(i) + " ('" +
                        time_index[i] + "')");
      }
    }
    prev = t;
  }
}

}  // namespace

// ---- timestamps -------------------------------------------------------------

std::int64_t parse_timestamp(const std::string& raw) {
  std::string text = trim(raw);
  if (!text.empty() && (text.back() == 'Z' || text.back() == 'z')) text.pop_back();
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') {
    throw DataError("malformed timestamp '" + raw + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{parse_int(text, 0, 4)},
                           month{static_cast<unsigned>(parse_int(text, 5, 2))},
                           day{static_cast<unsigned>(parse_int(text, 8, 2))}};
  if (!ymd.ok()) throw DataError("invalid calendar date '" + raw + "'");
  int hh = 0, mm = 0, ss = 0;
  if (text.size() > 10) {
    if ((text[10] != 'T' && text[10] != ' ') || text.size() < 16 || text[13] != ':') {
      throw DataError("malformed timestamp '" + raw + "'");
    }
    hh = parse_int(text, 11, 2);
    mm = parse_int(text, 14, 2);
    if (text.size() > 16) {
      if (text.size() != 19 || text[16] != ':') throw DataError("malformed timestamp '" + raw + "'");
      ss = parse_int(text, 17, 2);
    }
    if (hh > 23 || mm > 59 || ss > 60) throw DataError("invalid time of day '" + raw + "'");
  }
  const sys_seconds t = sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss};
  return t.time_since_epoch().count();
}

std::string format_timestamp(std::int64_t epoch_seconds) {
  using namespace std::chrono;
  const sys_seconds t{seconds{epoch_seconds}};
  const auto d = floor<days>(t);
  const year_month_day ymd{d};
  const hh_mm_ss hms{t - d};
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()));
  return buf;
}

// ---- dataset ----------------------------------------------------------------

void TtsDataset::validate() const {
  if (values.shape().rank() != 3) {
    throw DataError("dataset values must be rank 3 (T, L, S), got " + values.shape().str());
  }
  if (static_cast<Index>(time_index.size()) != steps()) {
    throw DataError("time index has " + std::to_string(time_index.size()) + " entries for " +
                    std::to_string(steps()) + " steps");
  }
  if (static_cast<Index>(location_ids.size()) != locations() ||
      static_cast<Index>(source_ids.size()) != sources()) {
    throw DataError("location/source id lists do not match tensor shape " +
                    values.shape().str());
  }
  check_time_axis(time_index);
  for (Index t = 0; t < steps(); ++t)
    for (Index l = 0; l < locations(); ++l)
      for (Index s = 0; s < sources(); ++s)
        if (!std::isfinite(values.at({t, l, s}))) {
          throw DataError("non-finite value at (t=" + std::to_string(t) + ", l=" +
                          std::to_string(l) + ", s=" + std::to_string(s) + ")");
        }
}

TtsDataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("no rows");
  const auto header = split_fields(line);
  if (header != std::vector<std::string>{"timestamp", "location", "source", "value"}) {
    throw DataError("expected header 'timestamp,location,source,value', got '" + trim(line) + "'");
  }

  struct Cell {
    Index t, l, s;
    double v;
    std::size_t row;
  };
  std::vector<std::string> times;
  std::vector<std::string> locs, srcs;
  std::unordered_map<std::string, Index> loc_index, src_index;
  std::vector<Cell> cells;
  std::int64_t last_time = 0;

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 4) {
      throw DataError("row " + std::to_string(row) + ": expected 4 fields, got " +
                      std::to_string(f.size()));
    }
    const std::int64_t ts = parse_timestamp(f[0]);
    if (times.empty() || ts != last_time) {
      if (!times.empty() && ts < last_time) {
        throw DataError("row " + std::to_string(row) + ": timestamp '" + f[0] +
                        "' precedes an earlier row (timestamps must be non-decreasing)");
      }
      times.push_back(f[0]);
      last_time = ts;
    }
    auto [li, l_new] = loc_index.try_emplace(f[1], static_cast<Index>(locs.size()));
    if (l_new) locs.push_back(f[1]);
    auto [si, s_new] = src_index.try_emplace(f[2], static_cast<Index>(srcs.size()));
    if (s_new) srcs.push_back(f[2]);

    double v = 0.0;
    const char* first = f[3].data();
    const char* last = first + f[3].size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (f[3].empty() || ec != std::errc() || ptr != last) {
      throw DataError("row " + std::to_string(row) + ": cannot parse value '" + f[3] + "'");
    }
    cells.push_back({static_cast<Index>(times.size()) - 1, li->second, si->second, v, row});
  }
  if (cells.empty()) throw DataError("no rows");

  TtsDataset data;
  const Index nt = static_cast<Index>(times.size());
  const Index nl = static_cast<Index>(locs.size());
  const Index ns = static_cast<Index>(srcs.size());
  data.values = Tensor(Shape{nt, nl, ns});
  std::vector<char> seen(static_cast<std::size_t>(nt * nl * ns), 0);
  for (const Cell& c : cells) {
    const std::string where = "(t=" + std::to_string(c.t) + ", l=" + std::to_string(c.l) +
                              ", s=" + std::to_string(c.s) + ")";
    if (!std::isfinite(c.v)) {
      throw DataError("row " + std::to_string(c.row) + ": non-finite value at " + where);
    }
    const Index off = (c.t * nl + c.l) * ns + c.s;
    if (seen[static_cast<std::size_t>(off)]) {
      throw DataError("row " + std::to_string(c.row) + ": duplicate cell " + where);
    }
    seen[static_cast<std::size_t>(off)] = 1;
    data.values[off] = c.v;
  }
  for (Index off = 0; off < nt * nl * ns; ++off) {
    if (!seen[static_cast<std::size_t>(off)]) {
      const Index s = off % ns, l = (off / ns) % nl, t = off / (ns * nl);
      throw DataError("ragged input: missing cell (t=" + std::to_string(t) + ", l=" +
                      std::to_string(l) + ", s=" + std::to_string(s) + ")");
    }
  }
  data.time_index = std::move(times);
  data.location_ids = std::move(locs);
  data.source_ids = std::move(srcs);
  check_time_axis(data.time_index);
  return data;
}

void write_csv(std::ostream& out, const TtsDataset& data) {
  out << "timestamp,location,source,value\n";
  char buf[64];
  for (Index t = 0; t < data.steps(); ++t)
    for (Index l = 0; l < data.locations(); ++l)
      for (Index s = 0; s < data.sources(); ++s) {
        std::snprintf(buf, sizeof(buf), "%.17g", data.values.at({t, l, s}));
        out << data.time_index[static_cast<std::size_t>(t)] << ','
            << data.location_ids[static_cast<std::size_t>(l)] << ','
            << data.source_ids[static_cast<std::size_t>(s)] << ',' << buf << '\n';
      }
}

TtsDataset load_dataset(const std::filesystem::path& path, DataFormat format,
                        const std::filesystem::path& sidecar) {
  if (!std::filesystem::exists(path)) throw DataError("data file not found: " + path.string());
  if (format == DataFormat::kCsv) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return read_csv(in);
  }
  std::vector<NamedTensor> entries;
  try {
    entries = read_archive(path);
  } catch (const FormatError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  TtsDataset data;
  bool found = false;
  for (auto& e : entries) {
    if (e.name == "values") {
      data.values = std::move(e.tensor);
      found = true;
    }
  }
  if (!found) throw DataError(path.string() + ": archive has no 'values' entry");
  const std::filesystem::path meta =
      sidecar.empty() ? std::filesystem::path(path.string() + ".json") : sidecar;
  std::ifstream in(meta);
  if (!in) throw DataError("sidecar not found: " + meta.string());
  try {
    const auto j = nlohmann::json::parse(in);
    data.time_index = j.at("time_index").get<std::vector<std::string>>();
    data.location_ids = j.at("location_ids").get<std::vector<std::string>>();
    data.source_ids = j.at("source_ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta.string() + ": " + e.what());
  }
  data.validate();
  return data;
}

void save_binary(const std::filesystem::path& path, const TtsDataset& data) {
  write_archive(path, {{"values", data.values}});
  nlohmann::json j;
  j["time_index"] = data.time_index;
  j["location_ids"] = data.location_ids;
  j["source_ids"] = data.source_ids;
  std::ofstream out(path.string() + ".json");
  out << j.dump(2) << '\n';
}

// ---- splits and normalisation -------------------------------------------------

Splits resolve_splits(Index total, const SplitSpec& spec) {
  if (spec.train < 1) throw DataError("train split must be non-empty");
  if (spec.val < 0 || spec.test < 0) throw DataError("split sizes must be non-negative");
  if (spec.train + spec.val + spec.test > total) {
    throw DataError("splits " + std::to_string(spec.train) + "/" + std::to_string(spec.val) + "/" +
                    std::to_string(spec.test) + " exceed " + std::to_string(total) + " steps");
  }
  Splits s;
  s.train = {0, spec.train};
  s.val = {spec.train, spec.train + spec.val};
  s.test = {s.val.end, s.val.end + spec.test};
  return s;
}

Tensor NormStats::normalize(const Tensor& values) const {
  Tensor out = values;
  const Index ns = values.dim(values.shape().rank() - 1);
  for (Index i = 0; i < out.size(); ++i) {
    const Index s = i % ns;
    out[i] = (values[i] - mean_for(s)) / std_for(s);
  }
  return out;
}

Tensor NormStats::denormalize(const Tensor& values) const {
  Tensor out = values;
  const Index ns = values.dim(values.shape().rank() - 1);
  for (Index i = 0; i < out.size(); ++i) {
    const Index s = i % ns;
    out[i] = values[i] * std_for(s) + mean_for(s);
  }
  return out;
}

nlohmann::json NormStats::to_json() const {
  nlohmann::json j;
  j["per_source"] = per_source;
  j["mean"] = mean;
  j["std"] = std;
  j["source_mean"] = source_mean;
  j["source_std"] = source_std;
  return j;
}

NormStats NormStats::from_json(const nlohmann::json& j) {
  NormStats s;
  s.per_source = j.at("per_source").get<bool>();
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.source_mean = j.at("source_mean").get<std::vector<double>>();
  s.source_std = j.at("source_std").get<std::vector<double>>();
  return s;
}

ZScoreResult zscore(const TtsDataset& data, const SplitRange& train, bool per_source) {
  if (train.length() < 1 || train.begin < 0 || train.end > data.steps()) {
    throw DataError("z-score requires a non-empty training range inside the dataset");
  }
  const Index nl = data.locations();
  const Index ns = data.sources();
  ZScoreResult r;
  r.stats.per_source = per_source;
  const Index groups = per_source ? ns : 1;
  std::vector<double> means(static_cast<std::size_t>(groups), 0.0);
  std::vector<double> stds(static_cast<std::size_t>(groups), 0.0);
  std::vector<Index> counts(static_cast<std::size_t>(groups), 0);
  for (Index t = train.begin; t < train.end; ++t)
    for (Index l = 0; l < nl; ++l)
      for (Index s = 0; s < ns; ++s) {
        const auto g = static_cast<std::size_t>(per_source ? s : 0);
        means[g] += data.values.at({t, l, s});
        ++counts[g];
      }
  for (std::size_t g = 0; g < means.size(); ++g) means[g] /= static_cast<double>(counts[g]);
  for (Index t = train.begin; t < train.end; ++t)
    for (Index l = 0; l < nl; ++l)
      for (Index s = 0; s < ns; ++s) {
        const auto g = static_cast<std::size_t>(per_source ? s : 0);
        const double d = data.values.at({t, l, s}) - means[g];
        stds[g] += d * d;
      }
  for (std::size_t g = 0; g < stds.size(); ++g) {
    stds[g] = std::sqrt(stds[g] / static_cast<double>(counts[g]));
    if (stds[g] == 0.0) {
      stds[g] = 1.0;
      r.warnings.push_back(per_source ? "constant training series for source '" +
                                            data.source_ids[g] + "'; using std = 1"
                                      : "constant training series; using std = 1");
    }
  }
  if (per_source) {
    r.stats.source_mean = means;
    r.stats.source_std = stds;
  } else {
    r.stats.mean = means[0];
    r.stats.std = stds[0];
  }
  r.dataset = data;
  r.dataset.values = r.stats.normalize(data.values);
  return r;
}

// ---- windows ----------------------------------------------------------------

Index window_count(const SplitRange& range, Index input_len, Index horizon) {
  const Index need = input_len + horizon;
  if (range.length() < need) {
    throw DataError("split of length " + std::to_string(range.length()) +
                    " is too short for windows; requires at least " + std::to_string(need) +
                    " steps");
  }
  return range.length() - need + 1;
}

std::vector<Index> window_starts(const SplitRange& range, Index input_len, Index horizon) {
  const Index n = window_count(range, input_len, horizon);
  std::vector<Index> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = range.begin + i;
  return out;
}

WindowedSample make_window(const Tensor& values, Index t0, Index input_len, Index horizon) {
  const Index nl = values.dim(1);
  const Index ns = values.dim(2);
  const Index plane = nl * ns;
  if (t0 < 0 || t0 + input_len + horizon > values.dim(0)) {
    throw DataError("window at t0=" + std::to_string(t0) + " exceeds the series");
  }
  WindowedSample w;
  w.t0 = t0;
  w.x = Tensor(Shape{input_len, nl, ns});
  w.y = Tensor(Shape{horizon, nl, ns});
  std::copy_n(values.data() + t0 * plane, input_len * plane, w.x.data());
  std::copy_n(values.data() + (t0 + input_len) * plane, horizon * plane, w.y.data());
  return w;
}

std::vector<WindowedSample> window(const Tensor& values, const SplitRange& range, Index input_len,
                                   Index horizon) {
  std::vector<WindowedSample> out;
  for (Index t0 : window_starts(range, input_len, horizon)) {
    out.push_back(make_window(values, t0, input_len, horizon));
  }
  return out;
}

// ---- synthetic generator ----------------------------------------------------

nlohmann::json SynthSpec::to_json() const {
  nlohmann::json j;
  j["locations"] = locations;
  j["sources"] = sources;
  j["steps"] = steps;
  j["components"] = nlohmann::json::array();
  for (const auto& c : components) j["components"].push_back({{"mean", c.mean}, {"std", c.std}});
  j["assignment"] = assignment;
  j["seasonal_amplitude"] = seasonal_amplitude;
  j["seasonal_period"] = seasonal_period;
  j["noise_std"] = noise_std;
  j["seed"] = seed;
  j["start_time"] = start_time;
  j["step_seconds"] = step_seconds;
  return j;
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "locations",       "sources",   "steps", "components", "assignment", "seasonal_amplitude",
      "seasonal_period", "noise_std", "seed",  "start_time", "step_seconds"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw DataError("unknown synthetic spec key '" + key + "'");
    }
  }
  SynthSpec s;
  try {
    s.locations = j.value("locations", s.locations);
    s.sources = j.value("sources", s.sources);
    s.steps = j.value("steps", s.steps);
    if (j.contains("components")) {
      s.components.clear();
      for (const auto& c : j.at("components")) {
        s.components.push_back({c.at("mean").get<double>(), c.at("std").get<double>()});
      }
    }
    s.assignment = j.value("assignment", s.assignment);
    s.seasonal_amplitude = j.value("seasonal_amplitude", s.seasonal_amplitude);
    s.seasonal_period = j.value("seasonal_period", s.seasonal_period);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.seed = j.value("seed", s.seed);
    s.start_time = j.value("start_time", s.start_time);
    s.step_seconds = j.value("step_seconds", s.step_seconds);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

SynthResult generate_synthetic(const SynthSpec& spec) {
  const Index nl = spec.locations, ns = spec.sources, nt = spec.steps;
  if (nl < 1 || ns < 1 || nt < 1) throw DataError("synthetic spec needs positive L, S and steps");
  const Index k = spec.k_true();
  if (k < 1) throw DataError("synthetic spec needs at least one component");
  if (k > nl * ns) {
    throw DataError("K_true=" + std::to_string(k) + " exceeds L*S=" + std::to_string(nl * ns) +
                    " series; components cannot all be assigned");
  }
  if (spec.seasonal_period <= 0) throw DataError("seasonal period must be positive");
  if (spec.step_seconds < 1) throw DataError("step_seconds must be positive");
  for (const auto& c : spec.components) {
    if (!(c.std >= 0)) throw DataError("component std must be non-negative");
  }

  SynthResult r;
  if (spec.assignment.empty()) {
    for (Index i = 0; i < nl * ns; ++i) r.labels.push_back(i % k);
  } else {
    if (static_cast<Index>(spec.assignment.size()) != nl * ns) {
      throw DataError("assignment must list one component per (l, s) series");
    }
    for (Index c : spec.assignment) {
      if (c < 0 || c >= k) throw DataError("assignment refers to unknown component");
    }
    r.labels = spec.assignment;
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  TtsDataset& d = r.dataset;
  d.values = Tensor(Shape{nt, nl, ns});
  for (Index t = 0; t < nt; ++t) {
    const double season = spec.seasonal_amplitude *
                          std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                                   spec.seasonal_period);
    for (Index i = 0; i < nl * ns; ++i) {
      const SynthComponent& c = spec.components[static_cast<std::size_t>(r.labels[static_cast<std::size_t>(i)])];
      const double noise = gauss(rng);
      d.values[t * nl * ns + i] = c.mean + season + spec.noise_std * c.std * noise;
    }
  }
  const std::int64_t start = parse_timestamp(spec.start_time);
  for (Index t = 0; t < nt; ++t) d.time_index.push_back(format_timestamp(start + t * spec.step_seconds));
  for (Index l = 0; l < nl; ++l) d.location_ids.push_back("loc" + std::to_string(l));
  for (Index s = 0; s < ns; ++s) d.source_ids.push_back("src" + std::to_string(s));
  return r;
}

}  // namespace gmrl
