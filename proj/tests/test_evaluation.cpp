#include <gtest/gtest.h>

#include "simsea/error.hpp"
#include "simsea/evaluation.hpp"

using namespace simsea;

namespace {

const std::vector<std::string> kIds = {"a", "b", "c", "d"};

const char* kLabels =
    "image_id,subject_id,label\n"
    "a,s1,1\nb,s1,1\nc,s1,0\nd,s1,0\n"
    "a,s2,1\nb,s2,0\nc,s2,0\nd,s2,1\n";

ResultSet result_of(std::vector<std::pair<std::string, int>> entries) {
  ResultSet rs;
  for (std::size_t i = 0; i < entries.size(); ++i)
    rs.entries.push_back({{entries[i].first, "s", 0, static_cast<int>(i)}, entries[i].second});
  return rs;
}

}  // namespace

TEST(Labels, ParsesValidFile) {
  const auto gt = parse_labels(kLabels, kIds);
  EXPECT_EQ(gt.subjects, (std::vector<std::string>{"s1", "s2"}));
  EXPECT_EQ(gt.positives("s1"), (std::set<std::string>{"a", "b"}));
  const std::set<std::string> within = {"b", "d"};
  EXPECT_EQ(gt.positives("s2", &within), (std::set<std::string>{"d"}));
}

TEST(Labels, RejectsMalformedInput) {
  EXPECT_THROW(parse_labels("id,subject,label\n", kIds), ValidationError);
  EXPECT_THROW(parse_labels("", kIds), ValidationError);
  EXPECT_THROW(parse_labels("image_id,subject_id,label\na,s1,2\n", {kIds.data(), 1}), ValidationError);
  EXPECT_THROW(parse_labels("image_id,subject_id,label\na,s1,1\na,s1,0\n", {kIds.data(), 1}), ValidationError);
  EXPECT_THROW(parse_labels("image_id,subject_id,label\nz,s1,1\n", {kIds.data(), 1}), ValidationError);
  try {
    parse_labels("image_id,subject_id,label\na,s1,1\n", kIds);
    FAIL() << "missing cells accepted";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("3 missing"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(s1, b)"), std::string::npos);
  }
}

TEST(Labels, IgnoredIdsAreSkipped) {
  const std::vector<std::string> ignored = {"z"};
  const auto gt = parse_labels("image_id,subject_id,label\na,s1,1\nz,s1,1\n", {kIds.data(), 1}, ignored);
  EXPECT_EQ(gt.labels.size(), 1u);
}

TEST(Relevance, CountsAndHistogram) {
  const auto gt = parse_labels(kLabels, kIds);
  const auto rel = relevance_scores(gt);
  EXPECT_EQ(rel.scores.at("a"), 2);
  EXPECT_EQ(rel.scores.at("b"), 1);
  EXPECT_EQ(rel.scores.at("c"), 0);
  EXPECT_EQ(rel.histogram(), (std::vector<std::size_t>{1, 2, 1}));
  EXPECT_EQ(relevance_scores(gt, {"a", "c"}).histogram(), (std::vector<std::size_t>{1, 0, 1}));
}

TEST(PrecisionRecall, DefinitionAndUndefinedCases) {
  auto pr = precision_recall({"a", "b", "c"}, {"a", "d"});
  EXPECT_DOUBLE_EQ(*pr.precision, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(*pr.recall, 0.5);
  pr = precision_recall({}, {"a"});
  EXPECT_FALSE(pr.precision);
  EXPECT_DOUBLE_EQ(*pr.recall, 0.0);
  pr = precision_recall({"a"}, {});
  EXPECT_DOUBLE_EQ(*pr.precision, 0.0);
  EXPECT_FALSE(pr.recall);
}

TEST(Aggregate, PopulationVarianceOverDefinedValues) {
  const std::vector<std::optional<double>> v = {1.0, std::nullopt, 0.5, 0.0};
  const auto a = aggregate(v);
  EXPECT_DOUBLE_EQ(*a.mean, 0.5);
  EXPECT_DOUBLE_EQ(*a.variance, (0.25 + 0.0 + 0.25) / 3.0);
  EXPECT_EQ(a.defined, 3u);
  EXPECT_EQ(a.undefined, 1u);
  const std::vector<std::optional<double>> none = {std::nullopt};
  EXPECT_FALSE(aggregate(none).mean);
}

TEST(Methods, BaselinesAndSumGoogleRecall) {
  const auto gt = parse_labels(kLabels, kIds);
  const std::set<std::string> pooled(kIds.begin(), kIds.end());
  const auto report = evaluate_methods(result_of({{"a", 3}, {"b", 2}}), {"a", "c"}, pooled, gt);
  ASSERT_EQ(report.methods.size(), 3u);
  const auto& simsea = report.methods[0];
  EXPECT_EQ(simsea.method, "SIMSEA");
  EXPECT_DOUBLE_EQ(*simsea.rows[0].scores.precision, 1.0);
  EXPECT_DOUBLE_EQ(*simsea.rows[1].scores.precision, 0.5);
  EXPECT_DOUBLE_EQ(*simsea.rows[1].scores.recall, 0.5);
  EXPECT_DOUBLE_EQ(*simsea.precision.mean, 0.75);
  EXPECT_DOUBLE_EQ(*simsea.precision.variance, 0.0625);
  const auto& google = report.methods[1];
  EXPECT_TRUE(google.available);
  EXPECT_DOUBLE_EQ(*google.rows[0].scores.precision, 0.5);
  const auto& sum = report.methods[2];
  EXPECT_EQ(sum.retrieved, 4u);
  for (const auto& row : sum.rows) EXPECT_EQ(*row.scores.recall, 1.0);
  EXPECT_EQ(report.relevance_histogram, (std::vector<std::size_t>{1, 2, 1}));
}

TEST(Methods, MissingGoogleBaselineIsFlagged) {
  const auto gt = parse_labels(kLabels, kIds);
  const std::set<std::string> pooled(kIds.begin(), kIds.end());
  const auto report = evaluate_methods(result_of({}), {}, pooled, gt);
  EXPECT_FALSE(report.methods[1].available);
  EXPECT_FALSE(report.methods[0].rows[0].scores.precision);  // empty result set
  EXPECT_FALSE(report.notes.empty());
}

TEST(Spearman, KnownValues) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> y = {5, 6, 7, 8, 7};
  EXPECT_NEAR(*spearman(x, y), 0.8207826816681233, 1e-12);
  const std::vector<double> rev = {5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(*spearman(x, rev), -1.0);
  const std::vector<double> flat = {1, 1, 1, 1, 1};
  EXPECT_FALSE(spearman(x, flat));
  EXPECT_FALSE(spearman(std::vector<double>{1}, std::vector<double>{2}));
  EXPECT_THROW(spearman(x, std::vector<double>{1}), ValidationError);
}

TEST(Agreement, OverResultSetAndRanking) {
  const auto gt = parse_labels(kLabels, kIds);
  const auto rel = relevance_scores(gt);
  EXPECT_DOUBLE_EQ(*rank_relevance_agreement(result_of({{"a", 3}, {"b", 2}}), rel), 1.0);
  EXPECT_THROW(rank_relevance_agreement(result_of({}), rel), ValidationError);
  RankingTable table;
  for (auto [id, r] : std::vector<std::pair<std::string, int>>{{"a", 4}, {"b", 0}, {"c", 1}, {"d", 2}})
    table.rows.push_back({{id, "s", 0, 0}, r, {}});
  EXPECT_NEAR(*rank_relevance_agreement(table, rel), 0.632455532033676, 1e-12);
}
