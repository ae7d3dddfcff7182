#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "amor/amor.hpp"

namespace {

int report_error(const amor::Json& err) {
  std::cerr << err.dump() << '\n';
  return err["error"]["exit_code"].get<int>();
}

int report_error(const amor::Error& e) {
  return report_error(amor::detail::error_json(e.kind(), e.what(), e.exit_code()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AMOR magnetometer simulator and analysis toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(amor::kVersion));

  amor::ScenarioSpec spec;
  std::string out_dir = "out";
  bool no_env = false;

  for (const auto& [mode, name] : amor::mode_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " scenario");
    sub->add_option("--config,-c", spec.config_path, "configuration file (key = value [unit])");
    sub->add_option("--out,-o", out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed,-s", spec.seed, "RNG seed")->capture_default_str();
    sub->add_option("--workers,-j", spec.workers, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--powers", spec.powers, "power grid override, W")->delimiter(',');
    sub->add_option("--fields", spec.fields, "field grid for a field scan, T")->delimiter(',');
    sub->add_option("--frequencies", spec.frequencies, "modulation-frequency grid override, Hz")->delimiter(',');
    sub->add_flag("--no-env", no_env, "ignore AMOR_* environment overrides");
    sub->callback([&spec, mode = mode] { spec.mode = mode; });
  }

  std::string plot_dir = "out";
  auto* plot = app.add_subcommand("plotdata", "convert result files in a directory to plot data");
  plot->add_option("dir", plot_dir, "result directory")->capture_default_str();

  std::string show_path;
  auto* show = app.add_subcommand("show-config", "print the resolved configuration in SI units");
  show->add_option("--config,-c", show_path, "configuration file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(amor::detail::error_json("config", e.what(), amor::ExitCode::ConfigError));
  }

  try {
    if (plot->parsed()) {
      for (const auto& f : amor::emit_plotdata(plot_dir)) std::cout << f << '\n';
      return 0;
    }
    if (show->parsed()) {
      amor::ScenarioSpec s;
      s.config_path = show_path;
      std::cout << amor::serialize_config(amor::resolve_config(s));
      return 0;
    }
  } catch (const amor::Error& e) {
    return report_error(e);
  }

  spec.output_dir = out_dir;
  spec.env_overrides = !no_env;
  const auto outcome = amor::run_scenario(spec);
  if (outcome.code != amor::ExitCode::Success) return report_error(outcome.error);
  for (const auto& f : outcome.files) std::cout << f << '\n';
  std::cout << "manifest.json\n";
  return 0;
}
