#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqant/linalg.hpp"

namespace seqant {

/// Canonical label order; the label index of an event is its position in
/// this list (persisted in checkpoints so indices never silently permute).
const std::vector<std::string>& canonical_class_names();

/// One labeled two-stream sequence. `inside` holds x_1..x_T (driver-facing
/// features), `outside` holds z_1..z_T (road/vehicle features); both have
/// the same length T.
struct Event {
  std::string event_id;
  std::string label;
  std::vector<Vector> inside;
  std::vector<Vector> outside;
  double seconds_per_step = 0.8;

  std::size_t length() const { return inside.size(); }
};

struct Dataset {
  std::vector<Event> events;
  std::size_t inside_dim = 12;
  std::size_t outside_dim = 6;
  std::vector<std::string> class_names = canonical_class_names();

  std::size_t label_index(const std::string& label) const;  // throws if unknown
};

/// Enforces every Event invariant (equal stream lengths, uniform dims,
/// finite values, known labels, unique ids). Throws on violation.
void validate_dataset(const Dataset& d);

/// JSON-lines ingestion: one {"event_id","label","inside","outside"} object
/// per line. Dims are inferred from the first event and enforced on the
/// rest; every malformed line is rejected with its line number.
Dataset load_events(const std::string& path, double seconds_per_step = 0.8);

void save_events(const Dataset& d, const std::string& path);

/// Narrows a dataset to a subset of classes (e.g. the lane-change-only
/// setting); `keep` must be a subset of the canonical names in canonical
/// relative order and contain "straight".
Dataset filter_classes(const Dataset& d, const std::vector<std::string>& keep);

/// Class lists for the three evaluation settings: "all", "lane", "turns".
std::vector<std::string> setting_class_names(const std::string& setting);

struct SyntheticConfig {
  std::size_t events_per_class = 200;
  std::size_t t_min = 10;  // feature steps
  std::size_t t_max = 25;
  double onset_min = 0.25;  // fraction of T at which the intent signal starts
  double onset_max = 0.6;
  double signal_gain = 1.0;
  double noise_std = 0.3;
  std::uint64_t seed = 1;
};

/// Desk-scale stand-in for real driving data. Before a per-event onset step
/// both streams are zero-mean noise; from the onset on, the inside stream
/// drifts toward a class-specific direction with linearly growing strength
/// (cues grow as the maneuver approaches), and turn classes add a weaker
/// correlated bias on the outside stream. Straight events are pure noise.
Dataset generate_synthetic(const SyntheticConfig& cfg);

struct FoldSplit {
  std::size_t k = 0;
  std::unordered_map<std::string, std::size_t> assignments;  // event_id -> fold

  std::size_t fold_of(const std::string& event_id) const;
};

/// Seeded uniform partition into k folds whose sizes differ by at most one.
FoldSplit kfold_split(const Dataset& d, std::size_t k, std::uint64_t seed);

}  // namespace seqant
