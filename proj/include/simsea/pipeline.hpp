#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "simsea/features.hpp"
#include "simsea/matching.hpp"

namespace simsea {

struct PipelineConfig {
  std::vector<std::filesystem::path> manifests;  // one per category
  std::filesystem::path cache_dir;
  std::filesystem::path work_dir;
  DescriptorParams descriptor;
  int k = 200;
  std::uint64_t seed = 1;
  double match_threshold = 0.15;
  int min_r = 1;
  int per_category = 40;
  Metric metric = Metric::hellinger;
  std::optional<std::filesystem::path> labels;
  int max_dim = kDefaultMaxDim;
  int max_iters = 100;
  double tol = 1e-4;
  unsigned threads = 0;  // 0 = hardware concurrency; never affects outputs
  unsigned fetch_parallelism = 8;

  /// Throws ValidationError for out-of-range values.
  void validate() const;
};

/// Reads a JSON config. Relative paths resolve against the config's directory.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir);
std::string config_to_json(const PipelineConfig& config);

enum class Stage { fetch, features, codebook, vectorize, match, rank, clean, evaluate };

inline constexpr Stage kAllStages[] = {Stage::fetch,     Stage::features, Stage::codebook, Stage::vectorize,
                                       Stage::match,     Stage::rank,     Stage::clean,    Stage::evaluate};

std::string_view to_string(Stage stage);
std::optional<Stage> stage_from_string(std::string_view name);

struct StageOutcome {
  Stage stage = Stage::fetch;
  bool skipped = false;  // up to date, nothing rewritten
  std::string digest;
};

/// Runs one stage and writes its artifacts under work_dir/<stage>/. A stage
/// whose stamp already carries the same digest is a no-op. A stamp with a
/// different digest is refused (ValidationError) unless `force`. A missing
/// upstream stamp raises PrerequisiteError.
StageOutcome run_stage(Stage stage, const PipelineConfig& config, bool force = false);

/// Every stage in order.
std::vector<StageOutcome> run_all(const PipelineConfig& config, bool force = false);

/// Digest recorded by the stage's stamp, if the stage has run.
std::optional<std::string> stage_digest(Stage stage, const PipelineConfig& config);

std::filesystem::path stage_dir(const PipelineConfig& config, Stage stage);
std::filesystem::path result_set_path(const PipelineConfig& config);
std::filesystem::path report_path(const PipelineConfig& config);

enum class ReportFormat { table, json, csv };

ReportFormat report_format_from_string(std::string_view text);

struct ReportOptions {
  int top = 10;
  ReportFormat format = ReportFormat::table;
};

/// Renders the evaluation report and the top ranked images per category.
/// Requires the evaluate stage.
std::string render_report(const PipelineConfig& config, const ReportOptions& options);

/// Exclusive advisory lock on the work directory for the lifetime of the object.
class WorkDirLock {
 public:
  explicit WorkDirLock(const std::filesystem::path& work_dir);
  ~WorkDirLock();
  WorkDirLock(const WorkDirLock&) = delete;
  WorkDirLock& operator=(const WorkDirLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace simsea
