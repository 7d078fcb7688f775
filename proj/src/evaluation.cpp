#include "simsea/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "simsea/error.hpp"
#include "simsea/util.hpp"

namespace simsea {

std::set<std::string> GroundTruthLabels::positives(const std::string& subject,
                                                   const std::set<std::string>* within) const {
  std::set<std::string> out;
  for (const auto& [key, member] : labels) {
    if (key.first != subject || !member) continue;
    if (within && !within->count(key.second)) continue;
    out.insert(key.second);
  }
  return out;
}

GroundTruthLabels parse_labels(std::string_view csv_text, std::span<const std::string> image_ids,
                               std::span<const std::string> ignored_ids) {
  const std::unordered_set<std::string> known(image_ids.begin(), image_ids.end());
  const std::unordered_set<std::string> ignored(ignored_ids.begin(), ignored_ids.end());
  GroundTruthLabels gt;

  std::istringstream in{std::string(csv_text)};
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = csv_split(line);
    if (!header_seen) {
      header_seen = true;
      if (fields.size() != 3 || fields[0] != "image_id" || fields[1] != "subject_id" || fields[2] != "label")
        throw ValidationError("labels: expected header 'image_id,subject_id,label'");
      continue;
    }
    const std::string where = "labels line " + std::to_string(lineno);
    if (fields.size() != 3) throw ValidationError(where + ": expected 3 fields");
    const auto& image = fields[0];
    const auto& subject = fields[1];
    if (subject.empty()) throw ValidationError(where + ": empty subject id");
    if (fields[2] != "0" && fields[2] != "1") throw ValidationError(where + ": label must be 0 or 1");
    if (!known.count(image)) {
      if (ignored.count(image)) continue;
      throw ValidationError(where + ": unknown image id '" + image + "'");
    }
    if (std::find(gt.subjects.begin(), gt.subjects.end(), subject) == gt.subjects.end())
      gt.subjects.push_back(subject);
    if (!gt.labels.emplace(std::pair{subject, image}, fields[2] == "1").second)
      throw ValidationError(where + ": duplicate label for subject '" + subject + "', image '" + image + "'");
  }
  if (!header_seen) throw ValidationError("labels: file is empty");
  if (gt.subjects.empty()) throw ValidationError("labels: no subjects");

  std::vector<std::string> missing;
  for (const auto& subject : gt.subjects)
    for (const auto& image : image_ids)
      if (!gt.labels.count({subject, image})) missing.push_back("(" + subject + ", " + image + ")");
  if (!missing.empty()) {
    std::string msg = "labels: " + std::to_string(missing.size()) + " missing cell(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw ValidationError(msg);
  }
  return gt;
}

GroundTruthLabels load_labels(const std::filesystem::path& path, std::span<const std::string> image_ids,
                              std::span<const std::string> ignored_ids) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw ValidationError(std::string("labels: ") + e.what());
  }
  return parse_labels(text, image_ids, ignored_ids);
}

std::vector<std::size_t> RelevanceScore::histogram() const {
  std::vector<std::size_t> h(static_cast<std::size_t>(subjects) + 1, 0);
  for (const auto& [id, s] : scores) ++h[static_cast<std::size_t>(s)];
  return h;
}

RelevanceScore relevance_scores(const GroundTruthLabels& labels) {
  RelevanceScore rs;
  rs.subjects = static_cast<int>(labels.subjects.size());
  for (const auto& [key, member] : labels.labels) {
    int& s = rs.scores[key.second];
    if (member) ++s;
  }
  return rs;
}

RelevanceScore relevance_scores(const GroundTruthLabels& labels, const std::set<std::string>& within) {
  RelevanceScore all = relevance_scores(labels);
  RelevanceScore rs;
  rs.subjects = all.subjects;
  for (const auto& id : within) {
    auto it = all.scores.find(id);
    rs.scores[id] = it == all.scores.end() ? 0 : it->second;
  }
  return rs;
}

PrecisionRecall precision_recall(const std::set<std::string>& retrieved, const std::set<std::string>& relevant) {
  std::size_t hits = 0;
  for (const auto& id : retrieved) hits += relevant.count(id);
  PrecisionRecall pr;
  if (!retrieved.empty()) pr.precision = static_cast<double>(hits) / static_cast<double>(retrieved.size());
  if (!relevant.empty()) pr.recall = static_cast<double>(hits) / static_cast<double>(relevant.size());
  return pr;
}

Aggregate aggregate(std::span<const std::optional<double>> values) {
  Aggregate a;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++a.defined;
    } else {
      ++a.undefined;
    }
  }
  if (a.defined == 0) return a;
  const double mean = sum / static_cast<double>(a.defined);
  double ss = 0.0;
  for (const auto& v : values)
    if (v) ss += (*v - mean) * (*v - mean);
  a.mean = mean;
  a.variance = ss / static_cast<double>(a.defined);
  return a;
}

namespace {

MethodReport score_method(std::string name, const std::set<std::string>& retrieved,
                          const std::set<std::string>& universe, const GroundTruthLabels& labels) {
  MethodReport m;
  m.method = std::move(name);
  m.retrieved = retrieved.size();
  std::vector<std::optional<double>> p, r;
  for (const auto& subject : labels.subjects) {
    const auto truth = labels.positives(subject, &universe);
    SubjectRow row{subject, precision_recall(retrieved, truth)};
    p.push_back(row.scores.precision);
    r.push_back(row.scores.recall);
    m.rows.push_back(std::move(row));
  }
  m.precision = aggregate(p);
  m.recall = aggregate(r);
  return m;
}

}  // namespace

EvalReport evaluate_methods(const ResultSet& simsea, const std::set<std::string>& google,
                            const std::set<std::string>& subsearch_union, const GroundTruthLabels& labels) {
  EvalReport report;
  const auto ids = simsea.ids();
  const std::set<std::string> simsea_set(ids.begin(), ids.end());
  report.methods.push_back(score_method("SIMSEA", simsea_set, subsearch_union, labels));

  MethodReport g = score_method("Google", google, subsearch_union, labels);
  if (google.empty()) {
    g.available = false;
    report.notes.push_back("no cue-less subsearch in the manifest; Google baseline unavailable");
  } else {
    report.notes.push_back("Google baseline = the cue-less subsearch of the manifest");
  }
  report.methods.push_back(std::move(g));

  MethodReport sum = score_method("SumGoogle", subsearch_union, subsearch_union, labels);
  for (const auto& row : sum.rows) {
    // Every true set is drawn from the union, so recall is 1 whenever defined.
    if (row.scores.recall && *row.scores.recall != 1.0)
      throw Error("SumGoogle recall for subject '" + row.subject + "' is not 1");
  }
  report.methods.push_back(std::move(sum));

  report.relevance_histogram = relevance_scores(labels, subsearch_union).histogram();
  return report;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mean = (static_cast<double>(n) + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

int relevance_of(const RelevanceScore& relevance, const std::string& id) {
  auto it = relevance.scores.find(id);
  if (it == relevance.scores.end()) throw ValidationError("no relevance score for image '" + id + "'");
  return it->second;
}

}  // namespace

std::optional<double> rank_relevance_agreement(const ResultSet& result, const RelevanceScore& relevance) {
  if (result.entries.empty()) throw ValidationError("rank-relevance agreement needs a non-empty result set");
  std::vector<double> r, rel;
  for (const auto& e : result.entries) {
    r.push_back(e.r);
    rel.push_back(relevance_of(relevance, e.image.image_id));
  }
  return spearman(r, rel);
}

std::optional<double> rank_relevance_agreement(const RankingTable& ranking, const RelevanceScore& relevance) {
  std::vector<double> r, rel;
  for (const auto& row : ranking.rows) {
    r.push_back(row.r);
    rel.push_back(relevance_of(relevance, row.image.image_id));
  }
  return spearman(r, rel);
}

}  // namespace simsea
