#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "simsea/matching.hpp"

namespace simsea {

/// Per-subject yes/no category membership for every evaluated image.
struct GroundTruthLabels {
  std::vector<std::string> subjects;  // order of first appearance
  std::map<std::pair<std::string, std::string>, bool> labels;  // (subject, image) -> member

  /// Images the subject labelled as members, restricted to `within` when given.
  std::set<std::string> positives(const std::string& subject, const std::set<std::string>* within = nullptr) const;
};

/// Reads `image_id,subject_id,label` rows. Every (subject, image) cell of
/// `image_ids` must be present exactly once. Rows for ids in `ignored_ids`
/// (known but not evaluated, e.g. failed decodes) are skipped; any other
/// unknown id is an error.
GroundTruthLabels load_labels(const std::filesystem::path& path, std::span<const std::string> image_ids,
                              std::span<const std::string> ignored_ids = {});
GroundTruthLabels parse_labels(std::string_view csv_text, std::span<const std::string> image_ids,
                               std::span<const std::string> ignored_ids = {});

/// Number of subjects that labelled each image a member.
struct RelevanceScore {
  std::map<std::string, int> scores;
  int subjects = 0;

  /// histogram[c] = number of images with score c, for c in [0, subjects].
  std::vector<std::size_t> histogram() const;
};

RelevanceScore relevance_scores(const GroundTruthLabels& labels);
RelevanceScore relevance_scores(const GroundTruthLabels& labels, const std::set<std::string>& within);

/// Undefined ratios (empty A or empty B) are nullopt rather than zero.
struct PrecisionRecall {
  std::optional<double> precision;
  std::optional<double> recall;
};

PrecisionRecall precision_recall(const std::set<std::string>& retrieved, const std::set<std::string>& relevant);

struct Aggregate {
  std::optional<double> mean;
  std::optional<double> variance;  // population variance over defined values
  std::size_t defined = 0;
  std::size_t undefined = 0;
};

Aggregate aggregate(std::span<const std::optional<double>> values);

struct SubjectRow {
  std::string subject;
  PrecisionRecall scores;
};

struct MethodReport {
  std::string method;  // "SIMSEA", "Google", "SumGoogle"
  std::size_t retrieved = 0;
  std::vector<SubjectRow> rows;
  Aggregate precision;
  Aggregate recall;
  bool available = true;
};

struct EvalReport {
  std::vector<MethodReport> methods;
  std::vector<std::size_t> relevance_histogram;
  std::optional<double> agreement;  // Spearman r vs relevance over the result set
  std::optional<double> agreement_all;  // same over every ranked image
  std::vector<std::string> notes;
};

/// Precision and recall of SIMSEA, the cue-less Google subsearch, and the
/// union of all subsearches, for every subject. `google` may be empty when
/// the manifest has no cue-less subsearch; that method is then marked
/// unavailable. Each subject's true set is restricted to `subsearch_union`.
EvalReport evaluate_methods(const ResultSet& simsea, const std::set<std::string>& google,
                            const std::set<std::string>& subsearch_union, const GroundTruthLabels& labels);

/// Spearman rank correlation with average ranks for ties. nullopt if fewer
/// than two points or either side is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// Correlation between ranking factor and human relevance over the result set.
std::optional<double> rank_relevance_agreement(const ResultSet& result, const RelevanceScore& relevance);
/// Same over every row of a ranking table (result set members and rejects).
std::optional<double> rank_relevance_agreement(const RankingTable& ranking, const RelevanceScore& relevance);

}  // namespace simsea
