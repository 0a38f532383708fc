#pragma once

#include <optional>
#include <string>
#include <vector>

#include "seqant/dataset.hpp"
#include "seqant/network.hpp"
#include "seqant/training.hpp"

namespace seqant {

/// Outcome of streaming inference on one event. `fired_at` is the 1-based
/// step of the first qualifying prediction; absent when the model never
/// leaves "straight".
struct AnticipationResult {
  std::string event_id;
  std::size_t predicted = 0;
  std::optional<std::size_t> fired_at;
  std::optional<std::size_t> t_before_steps;   // T - t
  std::optional<double> t_before_seconds;      // (T - t) * seconds_per_step
  std::vector<Vector> trace;                   // per-step probability vectors
};

struct FiringDecision {
  std::size_t predicted = 0;
  std::optional<std::size_t> fired_at;  // 1-based
};

/// The threshold rule applied to a probability trace: fire at the first t
/// whose argmax differs from "straight" AND exceeds p_th. If the argmax is
/// straight, nothing fires even when another class is above the threshold.
FiringDecision scan_trace(const std::vector<Vector>& trace,
                          std::size_t straight_index, double p_th);

/// Streaming inference: advances the recurrent state one observation at a
/// time (never re-running the prefix), records the full probability trace,
/// and applies the threshold rule. Throws unless 0 < p_th <= 1.
AnticipationResult anticipate(const Model& model, const Event& event,
                              double p_th);

/// Evaluates many events; pure per event, so the parallel path just fills
/// indexed slots and is bit-identical to the serial one.
std::vector<AnticipationResult> anticipate_all(const Model& model,
                                               const std::vector<Event>& events,
                                               double p_th,
                                               bool parallel = true);

struct ClassTally {
  std::size_t true_positives = 0;  // TP_m
  std::size_t predicted = 0;       // P_m
  std::size_t actual = 0;          // N_m
};

struct MetricsReport {
  double p_th = 0.0;
  double precision = 0.0;  // mean over non-straight classes of TP_m / P_m
  double recall = 0.0;     // mean over non-straight classes of TP_m / N_m
  double f1 = 0.0;         // 2 Pr Re / (Pr + Re), 0 when Pr + Re == 0
  double mean_time_to_maneuver_s = 0.0;  // over correct non-straight firings
  std::size_t ttm_count = 0;
  std::size_t num_events = 0;
  std::vector<std::string> class_names;
  std::vector<ClassTally> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [predicted][actual]
};

/// Precision/recall averaged over the non-straight maneuvers; a class the
/// model never predicts contributes a zero precision term rather than being
/// dropped.
MetricsReport compute_metrics(const std::vector<AnticipationResult>& results,
                              const std::vector<std::size_t>& truths,
                              const std::vector<std::string>& class_names,
                              double p_th);

/// confusion[r][c] counts events predicted r whose true class is c.
std::vector<std::vector<std::size_t>> confusion_matrix(
    const std::vector<AnticipationResult>& results,
    const std::vector<std::size_t>& truths, std::size_t num_classes);

/// Aligned text rendering; `normalized` divides each row by its sum so the
/// diagonal shows per-prediction precision.
std::string confusion_table(const MetricsReport& report, bool normalized = false);

std::string metrics_to_json(const MetricsReport& report);

struct SweepPoint {
  double p_th = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double mean_ttm_s = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;  // in the caller's grid order
  double best_p_th = 0.0;          // argmax F1, ties toward the larger value
};

/// 0.05, 0.10, ..., 1.00.
std::vector<double> default_threshold_grid();

/// Evaluates every grid point on probability traces computed once.
SweepResult threshold_sweep(const Model& model, const std::vector<Event>& events,
                            const std::vector<double>& grid,
                            bool parallel = true);

std::string sweep_to_csv(const SweepResult& sweep);

/// Sample standard error: std(values, n-1 denominator) / sqrt(n); 0 for
/// fewer than two values.
double standard_error(const std::vector<double>& values);

struct CvAggregate {
  double mean = 0.0;
  double std_error = 0.0;
};

struct CvReport {
  std::size_t k = 0;
  std::vector<MetricsReport> folds;
  std::vector<double> fold_thresholds;
  CvAggregate precision, recall, f1, time_to_maneuver;
};

std::string cv_report_to_json(const CvReport& report);

struct FoldOutcome {
  MetricsReport metrics;
  double selected_p_th = 0.0;
};

/// Trains on every fold but `fold`, augmenting those training events only,
/// selects the threshold by F1 on the (un-augmented) training events, and
/// evaluates the held-out fold at that threshold.
FoldOutcome run_fold(const Dataset& d, const NetConfig& net_cfg,
                     const TrainConfig& train_cfg, const FoldSplit& split,
                     std::size_t fold, const std::vector<double>& grid);

/// Full k-fold protocol; `jobs > 1` trains folds concurrently with a
/// deterministic fold-ordered aggregation.
CvReport cross_validate(const Dataset& d, const NetConfig& net_cfg,
                        const TrainConfig& train_cfg, std::size_t k,
                        const std::vector<double>& grid, std::size_t jobs = 1);

}  // namespace seqant
