#include "vprb/pipeline.hpp"

#include <any>
#include <atomic>
#include <cctype>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "vprb/random.hpp"

namespace vprb {

namespace fs = std::filesystem;

// Stage outputs shared between matrix cells, keyed by a hash of the config
// fields the stage reads.
class StageCache {
 public:
  template <typename T, typename Fn>
  std::shared_ptr<const T> get(std::uint64_t key, Fn&& compute) {
    std::shared_future<std::shared_ptr<const T>> future;
    bool owner = false;
    std::promise<std::shared_ptr<const T>> promise;
    {
      std::lock_guard lock(mutex_);
      auto& slot = entries_[key];
      if (!slot.has_value()) {
        future = promise.get_future().share();
        slot = future;
        owner = true;
      } else {
        future = std::any_cast<std::shared_future<std::shared_ptr<const T>>>(slot);
      }
    }
    if (owner) {
      try {
        promise.set_value(std::make_shared<const T>(compute()));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return future.get();
  }

 private:
  std::mutex mutex_;
  std::map<std::uint64_t, std::any> entries_;
};

namespace {

// Training config reduced to the fields one stage depends on.
std::uint64_t mining_key(const TrainConfig& tc) {
  TrainConfig k;
  k.loss = tc.loss;
  k.mining = tc.mining;
  k.seed = tc.seed;
  return config_hash(k);
}

std::uint64_t baseline_key(const TrainConfig& tc) {
  TrainConfig k;
  k.model = tc.model;
  k.seed = tc.seed;
  return config_hash(k) ^ 0x5bd1e995u;
}

SequenceManifest load_sequence(const fs::path& path, SequenceRole role) {
  if (!fs::exists(path)) throw DataError(fmt::format("manifest not found: {}", path.string()));
  SequenceManifest seq = load_manifest(path, role);
  load_payloads(seq, path.parent_path());
  return seq;
}

std::vector<MatchReport> evaluate_model(const RunConfig& cfg, const PipelineData& data,
                                        const Model& model, const TrainConfig& tc,
                                        std::string_view loss_label, std::uint64_t hash) {
  const DescriptorIndex index =
      build_index(extract_sequence(data.reference, model, tc.model.pooling));
  std::vector<MatchReport> out;
  for (const auto& test : data.tests) {
    MatchReport r = evaluate_fcm(test, data.reference, index, model, cfg.eval.taus,
                                 cfg.eval.top_n);
    r.method = std::string(to_string(tc.model.pooling));
    r.backbone = tc.model.backbone_name();
    r.loss = std::string(loss_label);
    r.config_hash = hash;
    r.seed = tc.seed;
    out.push_back(std::move(r));
  }
  return out;
}

// Writes every artifact through a temporary file and rename. If any write
// fails, the files already placed are removed again.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path root) : root_(std::move(root)) {}

  void add(const fs::path& relative, std::string content) {
    pending_.emplace_back(relative, std::move(content));
  }

  void commit() {
    std::vector<fs::path> written;
    try {
      for (const auto& [rel, content] : pending_) {
        const fs::path target = root_ / rel;
        fs::create_directories(target.parent_path());
        const fs::path tmp = target.string() + ".tmp";
        {
          std::ofstream out(tmp, std::ios::binary);
          out.write(content.data(), static_cast<std::streamsize>(content.size()));
          if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw DataError(fmt::format("cannot write '{}'", target.string()));
          }
        }
        fs::rename(tmp, target);
        written.push_back(target);
      }
    } catch (...) {
      std::error_code ec;
      for (const auto& p : written) fs::remove(p, ec);
      throw;
    }
  }

 private:
  fs::path root_;
  std::vector<std::pair<fs::path, std::string>> pending_;
};

std::string loss_trace_csv(const std::vector<double>& losses) {
  std::string out = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) out += fmt::format("{},{}\n", e + 1, losses[e]);
  return out;
}

std::string table_notes_header(const RunConfig& cfg, const TrainConfig& tc) {
  std::string lr;
  for (LossKind l : cfg.matrix.losses) {
    lr += fmt::format("{}{}={:g}", lr.empty() ? "" : ", ", to_string(l),
                      cfg.loss_learning_rates.get(l).value_or(cfg.train.learning_rate));
  }
  return fmt::format(
      "training (benchmark defaults): SGD momentum {:g}, "
      "epochs {}, batch {}, learning rate {}",
      tc.momentum, tc.epochs, tc.batch_size, lr.empty() ? fmt::format("{:g}", tc.learning_rate) : lr);
}

ReportTable make_table(const RunConfig& cfg, const SequenceManifest& test,
                       const SequenceManifest& reference) {
  ReportTable t;
  t.title = fmt::format("FCM on {} (reference: {})", test.name, reference.name);
  t.taus = cfg.eval.taus;
  t.unit = cfg.eval.unit;
  t.notes.push_back(fmt::format(
      "matching: top-1 nearest reference descriptor (L2); a query is correct when its match "
      "lies within τ; top-{} lists kept for diagnostics only",
      cfg.eval.top_n));
  return t;
}

ReportRow failed_row(PoolingKind pooling, LossKind loss, const TrainConfig& tc) {
  ReportRow row;
  row.method = std::string(to_string(pooling));
  row.backbone = tc.model.backbone_name();
  row.loss = std::string(to_string(loss));
  row.failed = true;
  row.config_hash = config_hash(tc);
  row.seed = tc.seed;
  return row;
}

std::string file_tag(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-') ? c : '_';
  return out;
}

}  // namespace

PipelineData load_pipeline_data(const RunConfig& cfg) {
  PipelineData data;
  if (cfg.dataset.synthetic) {
    SynthDataset ds = synth_dataset(cfg.seed, cfg.dataset.synth);
    data.train = std::move(ds.train);
    data.reference = std::move(ds.reference);
    data.tests.push_back(std::move(ds.test01));
    data.tests.push_back(std::move(ds.test02));
    return data;
  }
  data.train = load_sequence(cfg.dataset.train, SequenceRole::kTrain);
  data.reference = load_sequence(cfg.dataset.reference, SequenceRole::kReference);
  for (const auto& p : cfg.dataset.tests) data.tests.push_back(load_sequence(p, SequenceRole::kTest));

  const std::size_t depth = data.train.payload(0).depth();
  auto check_depth = [depth](const SequenceManifest& seq) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq.payload(i).depth() != depth) {
        throw DataError(fmt::format("sequence '{}' frame '{}': payload depth {} differs from {}",
                                    seq.name, seq.frames[i].frame_id, seq.payload(i).depth(),
                                    depth));
      }
    }
  };
  check_depth(data.train);
  check_depth(data.reference);
  for (const auto& t : data.tests) check_depth(t);
  return data;
}

CellResult run_cell(const RunConfig& cfg, const PipelineData& data, PoolingKind pooling,
                    LossKind loss, StageCache* cache) {
  TrainConfig tc = cfg.train_config(pooling, loss);
  tc.model.input_depth = data.train.payload(0).depth();

  auto cached = [&]<typename T>(std::uint64_t key, auto&& compute) -> std::shared_ptr<const T> {
    if (cache == nullptr) return std::make_shared<const T>(compute());
    return cache->get<T>(key, compute);
  };

  const auto training_data = cached.template operator()<TrainingData>(
      mining_key(tc), [&] { return prepare_training_data(data.train, tc); });

  CellResult result;
  result.pooling = pooling;
  result.loss = loss;
  result.training.checkpoint = initialize_training(tc, data.train, *training_data);

  const std::uint64_t base_key = baseline_key(tc);
  const auto untrained = cached.template operator()<std::vector<MatchReport>>(base_key, [&] {
    return evaluate_model(cfg, data, result.training.checkpoint.model, tc, "untrained", base_key);
  });
  result.untrained = *untrained;

  result.training.epoch_losses =
      train_epochs(result.training.checkpoint, tc, data.train, *training_data);
  result.trained = evaluate_model(cfg, data, result.training.checkpoint.model, tc,
                                  to_string(loss), config_hash(tc));
  return result;
}

CellResult run_cell(const RunConfig& cfg, const PipelineData& data, PoolingKind pooling,
                    LossKind loss) {
  return run_cell(cfg, data, pooling, loss, nullptr);
}

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TrainingDivergence& e) {
    err << "training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitData;
  }
}

int cmd_run(const RunOptions& options, std::ostream& log, std::ostream& err) {
  try {
    const RunConfig cfg = load_run_config(options.config, options.overrides);
    const PipelineData data = load_pipeline_data(cfg);
    const PoolingKind pooling = cfg.train.model.pooling;
    const LossKind loss = cfg.train.loss;
    log << fmt::format("run: {} / {}, {} train frames, {} reference frames, {} test sequences\n",
                       to_string(pooling), to_string(loss), data.train.size(),
                       data.reference.size(), data.tests.size());

    const CellResult cell = run_cell(cfg, data, pooling, loss);
    const auto& losses = cell.training.epoch_losses;
    log << fmt::format("train: {} epochs, mean loss {:.6g} -> {:.6g}\n", losses.size(),
                       losses.front(), losses.back());

    ArtifactWriter out(options.out);
    out.add("config.json", to_json(cfg));
    out.add("checkpoint.vprc", serialize_checkpoint(cell.training.checkpoint));
    out.add("loss_trace.csv", loss_trace_csv(losses));
    std::string markdown;
    for (std::size_t i = 0; i < data.tests.size(); ++i) {
      ReportTable table = make_table(cfg, data.tests[i], data.reference);
      table.notes.push_back(table_notes_header(cfg, cfg.train_config(pooling, loss)));
      table.rows.push_back(to_row(cell.untrained[i]));
      table.rows.push_back(to_row(cell.trained[i]));
      out.add(fmt::format("report_{}.csv", file_tag(data.tests[i].name)),
              emit_report(table, ReportFormat::kCsv));
      markdown += emit_report(table, ReportFormat::kMarkdown) + "\n";
      log << fmt::format("eval {}: FCM@{:g} m untrained {:.1f} -> trained {:.1f}\n",
                         data.tests[i].name, cfg.eval.taus.front(), cell.untrained[i].fcm.front(),
                         cell.trained[i].fcm.front());
    }
    out.add("report.md", markdown);
    out.commit();
    log << fmt::format("artifacts written to {}\n", options.out.string());
    return kExitOk;
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
}

int cmd_matrix(const RunOptions& options, std::ostream& log, std::ostream& err) {
  RunConfig cfg;
  PipelineData data;
  try {
    cfg = load_run_config(options.config, options.overrides);
    data = load_pipeline_data(cfg);
  } catch (...) {
    return exit_code_for_current_exception(err);
  }

  struct Cell {
    PoolingKind pooling;
    LossKind loss;
  };
  std::vector<Cell> cells;
  for (PoolingKind p : cfg.matrix.poolings) {
    for (LossKind l : cfg.matrix.losses) cells.push_back({p, l});
  }
  std::vector<CellResult> results(cells.size());
  StageCache cache;
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      CellResult& r = results[i];
      std::ostringstream cell_err;
      try {
        r = run_cell(cfg, data, cells[i].pooling, cells[i].loss, &cache);
      } catch (...) {
        r = CellResult{};
        r.pooling = cells[i].pooling;
        r.loss = cells[i].loss;
        r.failed = true;
        r.exit_code = exit_code_for_current_exception(cell_err);
        r.error = cell_err.str();
      }
      std::lock_guard lock(log_mutex);
      if (r.failed) {
        err << fmt::format("[{}/{}] FAILED: {}", to_string(r.pooling), to_string(r.loss), r.error);
      } else {
        const auto& l = r.training.epoch_losses;
        log << fmt::format("[{}/{}] loss {:.6g} -> {:.6g}\n", to_string(r.pooling),
                           to_string(r.loss), l.front(), l.back());
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, cells.size()));
  std::vector<std::thread> threads;
  for (std::size_t j = 1; j < jobs; ++j) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  try {
    ArtifactWriter out(options.out);
    out.add("config.json", to_json(cfg));
    std::string traces = "method,loss,epoch,mean_loss\n";
    for (const auto& r : results) {
      if (r.failed) continue;
      const auto& l = r.training.epoch_losses;
      for (std::size_t e = 0; e < l.size(); ++e) {
        traces += fmt::format("{},{},{},{}\n", to_string(r.pooling), to_string(r.loss), e + 1, l[e]);
      }
      out.add(fmt::format("checkpoints/{}-{}.vprc", to_string(r.pooling), to_string(r.loss)),
              serialize_checkpoint(r.training.checkpoint));
    }
    out.add("loss_traces.csv", traces);

    std::string markdown = "# Method comparison\n\n";
    for (std::size_t t = 0; t < data.tests.size(); ++t) {
      ReportTable table = make_table(cfg, data.tests[t], data.reference);
      table.notes.push_back(table_notes_header(cfg, cfg.train));
      for (PoolingKind p : cfg.matrix.poolings) {
        bool baseline_done = false;
        for (std::size_t i = 0; i < cells.size(); ++i) {
          if (cells[i].pooling != p) continue;
          const CellResult& r = results[i];
          if (!r.failed && !baseline_done) {
            table.rows.push_back(to_row(r.untrained[t]));
            baseline_done = true;
          }
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
          if (cells[i].pooling != p) continue;
          const CellResult& r = results[i];
          if (r.failed) {
            TrainConfig tc = cfg.train_config(r.pooling, r.loss);
            tc.model.input_depth = data.train.payload(0).depth();
            table.rows.push_back(failed_row(r.pooling, r.loss, tc));
            table.rows.back().n_queries = data.tests[t].size();
          } else {
            table.rows.push_back(to_row(r.trained[t]));
          }
        }
      }
      out.add(fmt::format("matrix_{}.csv", file_tag(data.tests[t].name)),
              emit_report(table, ReportFormat::kCsv));
      markdown += emit_report(table, ReportFormat::kMarkdown) + "\n" + emit_deltas(table) + "\n";
    }
    out.add("matrix.md", markdown);
    out.commit();
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
  log << fmt::format("matrix: {} cells, artifacts written to {}\n", cells.size(),
                     options.out.string());
  for (const auto& r : results) {
    if (r.failed) return r.exit_code;
  }
  return kExitOk;
}

int cmd_gradcheck(const GradCheckOptions& options, std::ostream& log, std::ostream& err) {
  try {
    const std::vector<GradComponent> components =
        options.components.empty() ? all_grad_components() : options.components;
    const GradCheckReport report = grad_check(components, options.trials, options.tol, options.seed);
    log << report.to_text();
    return report.passed() ? kExitOk : kExitGradCheck;
  } catch (const InvalidInput& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
}

int cmd_synth(const RunOptions& options, std::ostream& log, std::ostream& err) {
  try {
    const RunConfig cfg = load_run_config(options.config, options.overrides);
    if (!cfg.dataset.synthetic) throw ConfigError("synth: dataset.kind must be \"synth\"");
    SynthDataset ds = synth_dataset(cfg.seed, cfg.dataset.synth);
    write_dataset(ds, options.out);
    log << fmt::format("wrote 4 sequences of {} frames to {}\n", ds.train.size(),
                       options.out.string());
    return kExitOk;
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
}

int cmd_report(const fs::path& csv, ReportFormat format, TauUnit unit, std::ostream& out,
               std::ostream& err) {
  try {
    std::ifstream in(csv, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open report '{}'", csv.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    ReportTable table = parse_report_csv(ss.str());
    table.unit = unit;
    table.title = csv.stem().string();
    out << emit_report(table, format);
    if (format == ReportFormat::kMarkdown && table.rows.size() > 1) out << '\n' << emit_deltas(table);
    return kExitOk;
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
}

}  // namespace vprb
