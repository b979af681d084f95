// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <omp.h>

#include "grating/cli_io.hpp"

namespace
{

std::string read_file(const std::string &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
  {
    throw grating::IoError("cannot read " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_or_print(const std::string &text, const std::string &path)
{
  if (path.empty() || path == "-")
  {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text))
  {
    throw grating::IoError("cannot write " + path);
  }
}

void apply_thread_env()
{
  const char *env = std::getenv("GRATING_NUM_THREADS");
  if (env == nullptr || *env == '\0')
  {
    return;
  }
  char *end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n <= 0)
  {
    throw grating::UsageError("GRATING_NUM_THREADS must be a positive integer");
  }
  omp_set_num_threads(static_cast<int>(n));
}

// Overrides are applied to the document before validation so they are checked like any
// other field.
grating::RunConfig load_config(const std::string &path, std::optional<long long> seed,
                               std::optional<int> truncation)
{
  const std::string text = read_file(path);
  if (!seed && !truncation)
  {
    return grating::parse_config(text);
  }
  grating::Json doc;
  try
  {
    doc = grating::Json::parse(text);
  }
  catch (const grating::Json::parse_error &e)
  {
    throw grating::SchemaError(std::string("configuration is not valid JSON: ") + e.what());
  }
  if (!doc.is_object())
  {
    throw grating::SchemaError("<root>: expected an object");
  }
  if (seed)
  {
    doc["seed"] = *seed;
  }
  if (truncation)
  {
    doc["truncation"] = *truncation;
  }
  return grating::parse_config(doc.dump());
}

int run(int argc, char **argv)
{
  CLI::App app{"Doubly periodic grating scattering toolkit"};
  app.set_version_flag("--version", grating::kToolVersion);

  std::string command;
  std::string config_path, out_path, plot_name, plot_out, record_path;
  std::optional<long long> seed;
  std::optional<int> truncation;

  app.add_option("command", command, "modes | green | solve | reciprocity | invert | indicator | plot")
      ->required();
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out_path, "result record path");
  app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--truncation", truncation, "override the truncation order N");
  app.add_option("--plot", plot_name, "efficiency_vs_order | indicator_curve | residual_history");
  app.add_option("--plot-out", plot_out, "plot table path (default stdout)");
  app.add_option("--record", record_path, "existing result record (plot command)");

  try
  {
    app.parse(argc, argv);
  }
  catch (const CLI::ParseError &e)
  {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(grating::ExitCode::usage);
  }

  apply_thread_env();

  if (command == "plot")
  {
    if (record_path.empty() || plot_name.empty())
    {
      throw grating::UsageError("plot needs --record and --plot");
    }
    const auto kind = grating::parse_plot_kind(plot_name);
    const auto rec = grating::parse_record(read_file(record_path));
    write_or_print(grating::emit_plot_data(rec, kind), plot_out);
    return 0;
  }

  const auto &cmds = grating::known_commands();
  if (std::find(cmds.begin(), cmds.end(), command) == cmds.end())
  {
    throw grating::UsageError("unknown command '" + command + "'");
  }
  if (config_path.empty() || out_path.empty())
  {
    throw grating::UsageError(command + " needs --config and --out");
  }
  std::optional<grating::PlotKind> plot;
  if (!plot_name.empty())
  {
    plot = grating::parse_plot_kind(plot_name);
  }

  const auto cfg = load_config(config_path, seed, truncation);
  const auto rec = grating::run_command(command, cfg, out_path);
  if (plot)
  {
    write_or_print(grating::emit_plot_data(rec, *plot), plot_out);
  }
  return 0;
}

}  // namespace

int main(int argc, char **argv)
{
  try
  {
    return run(argc, argv);
  }
  catch (const std::exception &e)
  {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(grating::exit_code_for(e));
  }
}
