#pragma once

// ROUGE-1/2/L with pluggable segmentation and length-bucketed reports.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace xlsum::metrics {

enum class SegmentationKind { Word, Character, Subword };

// How texts are cut into units before n-gram counting. Candidate and
// reference are always segmented with the same instance.
struct Segmentation {
  SegmentationKind kind = SegmentationKind::Word;
  std::vector<std::string> subword_units;  // sorted; used by Subword only

  static Segmentation word() { return {}; }
  static Segmentation character() { return {SegmentationKind::Character, {}}; }
  static Segmentation subword(std::vector<std::string> units);
};

Segmentation parse_segmentation(std::string_view name);
std::vector<std::string> segment(std::string_view text, const Segmentation& seg);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool empty_input = false;
};

RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n,
                   const Segmentation& seg = {});
RougeScore rouge_l(std::string_view candidate, std::string_view reference,
                   const Segmentation& seg = {});

// Same metrics on pre-segmented units.
RougeScore rouge_n_units(std::span<const std::string> candidate, std::span<const std::string> reference,
                         int n);
RougeScore rouge_l_units(std::span<const std::string> candidate, std::span<const std::string> reference);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct BucketStats {
  double lo = 0.0;
  double hi = 0.0;  // +inf for the open last bucket
  std::size_t count = 0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double mean_candidate_length = 0.0;
};

struct CorpusReport {
  std::size_t count = 0;
  double rouge1 = 0.0;  // mean F1 in [0,1]
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double mean_candidate_length = 0.0;
  double mean_reference_length = 0.0;
  std::optional<double> xsim;  // mean cosine, filled by callers that have a model
  std::vector<BucketStats> buckets;
};

inline const std::vector<double>& default_bucket_edges() {
  static const std::vector<double> edges{0.0, 10.0, 20.0, 40.0};
  return edges;
}

// Mean ROUGE F1 overall and per reference-length bucket. `edges` are the
// lower bounds of consecutive buckets; the last bucket is open-ended.
// The result does not depend on the order of `pairs`.
CorpusReport corpus_report(const std::vector<std::pair<std::string, std::string>>& pairs,
                           const Segmentation& seg = {},
                           const std::vector<double>& edges = default_bucket_edges());

// One row per bucket: bucket, count, R1, R2, RL (scores x100).
std::string format_report_table(const CorpusReport& report);
// key=value lines, machine readable.
std::string format_report_kv(const CorpusReport& report);
// bucket_lo,bucket_hi,count,rouge1,rouge2,rougeL,mean_candidate_length
std::string format_bucket_csv(const CorpusReport& report);

}  // namespace xlsum::metrics
