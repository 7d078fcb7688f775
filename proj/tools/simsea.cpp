#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "simsea/error.hpp"
#include "simsea/log.hpp"
#include "simsea/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kPrerequisite = 2, kRuntime = 3 };

struct Overrides {
  std::string config = "simsea.json";
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
  std::optional<int> min_r;
  std::optional<std::string> metric;
  std::optional<unsigned> threads;
  int top = 10;
  std::string format = "table";
  bool force = false;
  bool quiet = false;
  bool verbose = false;
};

simsea::PipelineConfig resolve_config(const Overrides& o) {
  simsea::PipelineConfig c = simsea::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.threshold) c.match_threshold = *o.threshold;
  if (o.min_r) c.min_r = *o.min_r;
  if (o.metric) c.metric = simsea::metric_from_string(*o.metric);
  if (o.threads) c.threads = *o.threads;
  c.validate();
  return c;
}

void print_outcome(const simsea::StageOutcome& out) {
  std::cout << simsea::to_string(out.stage) << ": " << (out.skipped ? "up to date" : "done") << " ("
            << out.digest.substr(0, 12) << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simsea: clean image search results by cross-subsearch visual agreement"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config, "Pipeline config (JSON)");
  app.add_option("--seed", o.seed, "Codebook sampling and k-means seed");
  app.add_option("--threshold", o.threshold, "Match threshold on the distance, in [0, 1]");
  app.add_option("--min-r", o.min_r, "Keep images whose ranking factor exceeds this");
  app.add_option("--metric", o.metric, "hellinger or chi_square");
  app.add_option("--threads", o.threads, "Worker threads (0 = all cores); outputs do not depend on it");
  app.add_option("--top", o.top, "Images listed per category in the report");
  app.add_option("--format", o.format, "Report format")->check(CLI::IsMember({"table", "json", "csv"}));
  app.add_flag("--force", o.force, "Rebuild stages whose configuration changed");
  app.add_flag("-q,--quiet", o.quiet, "Only print warnings and errors");
  app.add_flag("-v,--verbose", o.verbose, "Print debug messages");

  std::optional<simsea::Stage> stage;
  bool run_everything = false;
  bool report = false;
  for (simsea::Stage s : simsea::kAllStages) {
    const std::string name(simsea::to_string(s));
    auto* sub = app.add_subcommand(name, "Run the " + name + " stage");
    sub->fallthrough();
    sub->callback([&stage, s] { stage = s; });
  }
  auto* report_cmd = app.add_subcommand("report", "Print the evaluation report and top ranked images");
  report_cmd->fallthrough();
  report_cmd->callback([&report] { report = true; });
  auto* run_cmd = app.add_subcommand("run", "Run several stages");
  run_cmd->fallthrough();
  run_cmd->add_flag("--all", run_everything, "Run every stage in order")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  if (o.quiet) simsea::log::set_min_level(simsea::log::Level::warn);
  if (o.verbose) simsea::log::set_min_level(simsea::log::Level::debug);

  try {
    const simsea::PipelineConfig config = resolve_config(o);
    if (report) {
      simsea::ReportOptions ro;
      ro.top = o.top;
      ro.format = simsea::report_format_from_string(o.format);
      std::cout << simsea::render_report(config, ro);
      return kOk;
    }
    simsea::WorkDirLock lock(config.work_dir);
    if (run_everything) {
      for (const auto& out : simsea::run_all(config, o.force)) print_outcome(out);
    } else if (stage) {
      print_outcome(simsea::run_stage(*stage, config, o.force));
    }
    return kOk;
  } catch (const simsea::PrerequisiteError& e) {
    std::cerr << "simsea: " << e.what() << "\n";
    return kPrerequisite;
  } catch (const simsea::ValidationError& e) {
    std::cerr << "simsea: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "simsea: " << e.what() << "\n";
    return kRuntime;
  }
}
