#pragma once

#include "itkrm/candidates.hpp"
#include "itkrm/linalg.hpp"

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <vector>

namespace itkrm {

/// Metrics of one learning iteration. Distances are NaN when no generating
/// dictionary is known (image data).
struct IterationRecord {
  int iter = 0;
  double distance = std::numeric_limits<double>::quiet_NaN();
  double mean_atom_distance = std::numeric_limits<double>::quiet_NaN();
  double recovery_rate = std::numeric_limits<double>::quiet_NaN();
  Index K = 0;
  int S_e = 0;
  int S_bar = 0;
  double S_bar_raw = 0.0;
  double S_t = 0.0;
  int replaced = 0;
  int merges = 0;
  int pruned_unused = 0;
  int added = 0;
  double wallclock_ms = 0.0;
  double max_atom_movement = std::numeric_limits<double>::quiet_NaN();
};

struct Trajectory {
  std::vector<IterationRecord> records;
  Dictionary final_dictionary;
  std::vector<std::int64_t> final_scores;
  std::vector<Dictionary> dictionaries;  // only when requested
  std::vector<ReplacementEvent> events;
  int final_S_e = 0;  // adaptive runs: sparsity level after the last update
};

/// Largest per-slot movement between two equally sized dictionaries, sign
/// invariant: max_k min(||a_k - b_k||, ||a_k + b_k||).
inline double max_atom_movement(const Dictionary& before, const Dictionary& after) {
  if (before.size() != after.size() || before.dim() != after.dim()) return std::numeric_limits<double>::quiet_NaN();
  double worst = 0.0;
  for (Index k = 0; k < before.size(); ++k)
    worst = std::max(worst, atom_distance_from_ip(std::abs(before.atom(k).dot(after.atom(k)))));
  return worst;
}

inline void fill_recovery_metrics(IterationRecord& rec, const Dictionary* generating, const Dictionary& estimate,
                                  double threshold) {
  if (generating == nullptr) return;
  rec.distance = asym_distance(*generating, estimate).value;
  rec.mean_atom_distance = mean_atom_distance(*generating, estimate);
  rec.recovery_rate = recovery_rate(*generating, estimate, threshold);
}

inline void write_csv_number(std::ostream& os, double v) {
  if (std::isnan(v)) os << "nan";
  else os << v;
}

/// Columns: iter,distance,mean_atom_distance,recovery_rate,K,S_e,S_bar,
/// replaced,pruned,added,wallclock_ms, plus S_bar_raw,S_t,merges,pruned_unused
/// for adaptive runs. `with_wallclock = false` writes 0 so reruns are byte identical.
inline void write_trajectory_csv(std::ostream& os, const std::vector<IterationRecord>& records, bool adaptive_columns,
                                 bool with_wallclock = true) {
  os << "iter,distance,mean_atom_distance,recovery_rate,K,S_e,S_bar,replaced,pruned,added,wallclock_ms";
  if (adaptive_columns) os << ",S_bar_raw,S_t,merges,pruned_unused";
  os << '\n' << std::setprecision(10);
  for (const auto& r : records) {
    os << r.iter << ',';
    write_csv_number(os, r.distance);
    os << ',';
    write_csv_number(os, r.mean_atom_distance);
    os << ',';
    write_csv_number(os, r.recovery_rate);
    os << ',' << r.K << ',' << r.S_e << ',' << r.S_bar << ',' << r.replaced << ',' << (r.merges + r.pruned_unused)
       << ',' << r.added << ',' << (with_wallclock ? r.wallclock_ms : 0.0);
    if (adaptive_columns) os << ',' << r.S_bar_raw << ',' << r.S_t << ',' << r.merges << ',' << r.pruned_unused;
    os << '\n';
  }
}

inline void write_events_csv(std::ostream& os, const std::vector<ReplacementEvent>& events) {
  os << "iter,kind,first,second,score_first,score_second\n";
  for (const auto& e : events)
    os << e.iteration << ',' << e.kind << ',' << e.first << ',' << e.second << ',' << e.score_first << ','
       << e.score_second << '\n';
}

}  // namespace itkrm
