// Command-line driver: run, matrix, gradcheck, synth, report.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vprb/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"vprb: desk-scale visual place recognition benchmark"};
  app.require_subcommand(1);

  vprb::RunOptions run_opts;
  bool print_schema = false;
  auto* run = app.add_subcommand("run", "synth/load -> mine -> train -> extract -> eval -> report");
  run->add_option("config", run_opts.config, "JSON run config");
  run->add_option("--out", run_opts.out, "output directory")->capture_default_str();
  run->add_option("--set", run_opts.overrides, "override a config key (dotted.key=value)");
  run->add_flag("--print-schema", print_schema, "print the config JSON schema and exit");

  vprb::RunOptions matrix_opts;
  auto* matrix = app.add_subcommand("matrix", "train and evaluate every pooling x loss cell");
  matrix->add_option("config", matrix_opts.config, "JSON run config")->required();
  matrix->add_option("--out", matrix_opts.out, "output directory")->capture_default_str();
  matrix->add_option("--set", matrix_opts.overrides, "override a config key (dotted.key=value)");
  matrix->add_option("--jobs", matrix_opts.jobs, "cells trained in parallel")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  vprb::GradCheckOptions gc_opts;
  std::vector<std::string> components;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  gradcheck->add_option("--component", components,
                        "gem, netvlad, contrastive, triplet, arcface or backbone (repeatable)");
  gradcheck->add_option("--trials", gc_opts.trials, "random instances per component")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--tol", gc_opts.tol, "max relative error")->capture_default_str();
  gradcheck->add_option("--seed", gc_opts.seed, "instance seed")->capture_default_str();

  vprb::RunOptions synth_opts;
  auto* synth = app.add_subcommand("synth", "write the configured synthetic dataset");
  synth->add_option("config", synth_opts.config, "JSON run config")->required();
  synth->add_option("--out", synth_opts.out, "output directory")->capture_default_str();
  synth->add_option("--set", synth_opts.overrides, "override a config key (dotted.key=value)");

  std::string report_csv;
  std::string report_format = "markdown";
  std::string report_unit = "m";
  auto* report = app.add_subcommand("report", "render a report CSV as a table");
  report->add_option("csv", report_csv, "report CSV written by run or matrix")->required();
  report->add_option("--format", report_format, "csv or markdown")->capture_default_str();
  report->add_option("--unit", report_unit, "threshold display unit, m or cm")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : vprb::kExitConfig;
  }

  if (*run) {
    if (print_schema) {
      std::cout << vprb::run_config_schema() << '\n';
      return vprb::kExitOk;
    }
    if (run_opts.config.empty()) {
      std::cerr << "run: a config path is required\n";
      return vprb::kExitConfig;
    }
    return vprb::cmd_run(run_opts, std::cout, std::cerr);
  }
  if (*matrix) return vprb::cmd_matrix(matrix_opts, std::cout, std::cerr);
  if (*synth) return vprb::cmd_synth(synth_opts, std::cout, std::cerr);
  if (*gradcheck) {
    try {
      for (const auto& c : components) gc_opts.components.push_back(vprb::parse_grad_component(c));
    } catch (const vprb::Error& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return vprb::kExitConfig;
    }
    return vprb::cmd_gradcheck(gc_opts, std::cout, std::cerr);
  }
  if (*report) {
    vprb::ReportFormat format;
    vprb::TauUnit unit;
    try {
      format = vprb::parse_report_format(report_format);
      unit = vprb::parse_tau_unit(report_unit);
    } catch (const vprb::Error& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return vprb::kExitConfig;
    }
    return vprb::cmd_report(report_csv, format, unit, std::cout, std::cerr);
  }
  return vprb::kExitConfig;
}
