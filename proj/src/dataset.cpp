#include "seqant/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "seqant/rng.hpp"

namespace seqant {

namespace {

constexpr std::size_t kSyntheticInsideDim = 12;
constexpr std::size_t kSyntheticOutsideDim = 6;

[[noreturn]] void line_error(const std::string& path, std::size_t line,
                             const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<Vector> parse_stream(const nlohmann::json& j, const char* key,
                                 const std::string& path, std::size_t line) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    line_error(path, line, std::string("missing or non-array '") + key + "'");
  }
  std::vector<Vector> stream;
  for (const auto& row : j.at(key)) {
    if (!row.is_array()) line_error(path, line, std::string(key) + " rows must be arrays");
    Vector v;
    v.reserve(row.size());
    for (const auto& e : row) {
      if (!e.is_number()) line_error(path, line, std::string(key) + " entries must be numbers");
      const double d = e.get<double>();
      if (!std::isfinite(d)) {
        line_error(path, line, std::string("non-finite value in ") + key);
      }
      v.push_back(d);
    }
    stream.push_back(std::move(v));
  }
  return stream;
}

}  // namespace

const std::vector<std::string>& canonical_class_names() {
  static const std::vector<std::string> names = {
      "left_turn", "right_turn", "left_lane_change", "right_lane_change",
      "straight"};
  return names;
}

std::size_t Dataset::label_index(const std::string& label) const {
  auto it = std::find(class_names.begin(), class_names.end(), label);
  if (it == class_names.end()) {
    throw std::invalid_argument("unknown label '" + label + "'");
  }
  return static_cast<std::size_t>(it - class_names.begin());
}

void validate_dataset(const Dataset& d) {
  std::set<std::string> seen;
  for (const Event& ev : d.events) {
    if (ev.inside.empty() || ev.inside.size() != ev.outside.size()) {
      throw std::invalid_argument("event '" + ev.event_id +
                                  "': inside/outside lengths " +
                                  std::to_string(ev.inside.size()) + "/" +
                                  std::to_string(ev.outside.size()));
    }
    for (const Vector& v : ev.inside) {
      if (v.size() != d.inside_dim) {
        throw std::invalid_argument("event '" + ev.event_id +
                                    "': inside dim " + std::to_string(v.size()) +
                                    " != " + std::to_string(d.inside_dim));
      }
      for (double e : v) {
        if (!std::isfinite(e)) {
          throw std::invalid_argument("event '" + ev.event_id +
                                      "': non-finite value");
        }
      }
    }
    for (const Vector& v : ev.outside) {
      if (v.size() != d.outside_dim) {
        throw std::invalid_argument("event '" + ev.event_id +
                                    "': outside dim " + std::to_string(v.size()) +
                                    " != " + std::to_string(d.outside_dim));
      }
      for (double e : v) {
        if (!std::isfinite(e)) {
          throw std::invalid_argument("event '" + ev.event_id +
                                      "': non-finite value");
        }
      }
    }
    d.label_index(ev.label);  // throws on unknown label
    if (!seen.insert(ev.event_id).second) {
      throw std::invalid_argument("duplicate event id '" + ev.event_id + "'");
    }
  }
}

Dataset load_events(const std::string& path, double seconds_per_step) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  Dataset d;
  d.events.clear();
  std::string line;
  std::size_t line_no = 0;
  bool dims_known = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      // parse errors and numeric overflow (e.g. 1e999) both land here
      line_error(path, line_no, std::string("invalid JSON: ") + e.what());
    }
    Event ev;
    if (!j.contains("event_id") || !j.at("event_id").is_string()) {
      line_error(path, line_no, "missing or non-string 'event_id'");
    }
    ev.event_id = j.at("event_id").get<std::string>();
    if (!j.contains("label") || !j.at("label").is_string()) {
      line_error(path, line_no, "missing or non-string 'label'");
    }
    ev.label = j.at("label").get<std::string>();
    const auto& names = canonical_class_names();
    if (std::find(names.begin(), names.end(), ev.label) == names.end()) {
      line_error(path, line_no, "unknown label '" + ev.label + "'");
    }
    ev.inside = parse_stream(j, "inside", path, line_no);
    ev.outside = parse_stream(j, "outside", path, line_no);
    ev.seconds_per_step = seconds_per_step;
    if (ev.inside.empty()) line_error(path, line_no, "event has no steps");
    if (ev.inside.size() != ev.outside.size()) {
      line_error(path, line_no,
                 "inside and outside lengths differ (" +
                     std::to_string(ev.inside.size()) + " vs " +
                     std::to_string(ev.outside.size()) + ")");
    }
    if (!dims_known) {
      d.inside_dim = ev.inside[0].size();
      d.outside_dim = ev.outside[0].size();
      dims_known = true;
    }
    for (const Vector& v : ev.inside) {
      if (v.size() != d.inside_dim) {
        line_error(path, line_no,
                   "inside dim " + std::to_string(v.size()) + " != " +
                       std::to_string(d.inside_dim));
      }
    }
    for (const Vector& v : ev.outside) {
      if (v.size() != d.outside_dim) {
        line_error(path, line_no,
                   "outside dim " + std::to_string(v.size()) + " != " +
                       std::to_string(d.outside_dim));
      }
    }
    d.events.push_back(std::move(ev));
  }
  if (d.events.empty()) throw std::runtime_error(path + ": no events");
  validate_dataset(d);
  return d;
}

void save_events(const Dataset& d, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    for (const Event& ev : d.events) {
      nlohmann::json j;
      j["event_id"] = ev.event_id;
      j["label"] = ev.label;
      j["inside"] = ev.inside;
      j["outside"] = ev.outside;
      out << j.dump() << "\n";
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

Dataset filter_classes(const Dataset& d, const std::vector<std::string>& keep) {
  if (std::find(keep.begin(), keep.end(), "straight") == keep.end()) {
    throw std::invalid_argument("class subset must contain 'straight'");
  }
  Dataset out;
  out.inside_dim = d.inside_dim;
  out.outside_dim = d.outside_dim;
  out.class_names = keep;
  for (const Event& ev : d.events) {
    if (std::find(keep.begin(), keep.end(), ev.label) != keep.end()) {
      out.events.push_back(ev);
    }
  }
  return out;
}

std::vector<std::string> setting_class_names(const std::string& setting) {
  if (setting == "all") return canonical_class_names();
  if (setting == "lane") {
    return {"left_lane_change", "right_lane_change", "straight"};
  }
  if (setting == "turns") return {"left_turn", "right_turn", "straight"};
  throw std::invalid_argument("unknown setting '" + setting +
                              "' (all|lane|turns)");
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.events_per_class == 0) {
    throw std::invalid_argument("generate_synthetic: events_per_class must be >= 1");
  }
  if (cfg.t_min < 2 || cfg.t_min > cfg.t_max) {
    throw std::invalid_argument("generate_synthetic: bad T range");
  }
  if (!(cfg.onset_min > 0.0 && cfg.onset_min <= cfg.onset_max &&
        cfg.onset_max < 1.0)) {
    throw std::invalid_argument("generate_synthetic: onset fractions must satisfy 0 < min <= max < 1");
  }
  if (cfg.noise_std < 0.0) {
    throw std::invalid_argument("generate_synthetic: noise_std must be >= 0");
  }

  // Fixed class-specific unit directions on disjoint coordinate triples:
  // orthogonal across classes, so noiseless events are exactly separable.
  const auto& names = canonical_class_names();
  const std::size_t num_maneuvers = names.size() - 1;
  std::vector<Vector> inside_dir(num_maneuvers, Vector(kSyntheticInsideDim, 0.0));
  std::vector<Vector> outside_dir(num_maneuvers, Vector(kSyntheticOutsideDim, 0.0));
  const double w = 1.0 / std::sqrt(3.0);
  for (std::size_t c = 0; c < num_maneuvers; ++c) {
    for (std::size_t q = 0; q < 3; ++q) inside_dir[c][3 * c + q] = w;
  }
  outside_dir[0][0] = outside_dir[0][1] = outside_dir[0][2] = w;  // left_turn
  outside_dir[1][3] = outside_dir[1][4] = outside_dir[1][5] = w;  // right_turn

  Dataset d;
  d.inside_dim = kSyntheticInsideDim;
  d.outside_dim = kSyntheticOutsideDim;
  Rng rng(cfg.seed);
  for (std::size_t c = 0; c < names.size(); ++c) {
    const bool is_straight = names[c] == "straight";
    const bool is_turn = c < 2;
    for (std::size_t n = 0; n < cfg.events_per_class; ++n) {
      Event ev;
      ev.event_id = names[c] + "_" + std::to_string(n);
      ev.label = names[c];
      const std::size_t T =
          cfg.t_min + static_cast<std::size_t>(rng.below(cfg.t_max - cfg.t_min + 1));
      const double onset_frac = rng.uniform(cfg.onset_min, cfg.onset_max);
      const std::size_t onset = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::llround(onset_frac * static_cast<double>(T))),
          1, T);
      ev.inside.resize(T);
      ev.outside.resize(T);
      for (std::size_t t = 1; t <= T; ++t) {
        Vector xin(kSyntheticInsideDim);
        for (double& e : xin) e = rng.normal(0.0, cfg.noise_std);
        Vector xout(kSyntheticOutsideDim);
        for (double& e : xout) e = rng.normal(0.0, cfg.noise_std);
        if (!is_straight && t >= onset) {
          const double ramp = static_cast<double>(t - onset + 1) /
                              static_cast<double>(T - onset + 1);
          axpy(cfg.signal_gain * ramp, inside_dir[c], xin);
          if (is_turn) axpy(0.5 * cfg.signal_gain * ramp, outside_dir[c], xout);
        }
        ev.inside[t - 1] = std::move(xin);
        ev.outside[t - 1] = std::move(xout);
      }
      d.events.push_back(std::move(ev));
    }
  }
  return d;
}

std::size_t FoldSplit::fold_of(const std::string& event_id) const {
  auto it = assignments.find(event_id);
  if (it == assignments.end()) {
    throw std::invalid_argument("event '" + event_id + "' has no fold assignment");
  }
  return it->second;
}

FoldSplit kfold_split(const Dataset& d, std::size_t k, std::uint64_t seed) {
  const std::size_t n = d.events.size();
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (k > n) {
    throw std::invalid_argument("kfold_split: k=" + std::to_string(k) +
                                " exceeds event count " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  FoldSplit split;
  split.k = k;
  const std::size_t base = n / k, extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i, ++pos) {
      const std::string& id = d.events[order[pos]].event_id;
      if (!split.assignments.emplace(id, f).second) {
        throw std::invalid_argument("kfold_split: duplicate event id '" + id + "'");
      }
    }
  }
  return split;
}

}  // namespace seqant
