#include "tapegraph/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tapegraph/bench.hpp"
#include "tapegraph/gradcheck.hpp"
#include "tapegraph/rng.hpp"

namespace tapegraph::cli {

namespace {

std::string fmt(const char* spec, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

std::string real(double x) { return fmt("%.17g", x); }

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return kExitError;
}

void write_output(const OutputConfig& output,
                  const std::function<void(std::ostream&, Format)>& writer) {
  if (output.path.empty()) return;
  std::ofstream file(output.path, std::ios::binary);
  if (!file) throw usage_error("cannot open '" + output.path + "' for writing");
  writer(file, output.format);
  if (!file) throw usage_error("failed writing '" + output.path + "'");
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::None:
      return "none";
    case Normalization::MaxAbs:
      return "maxabs";
    case Normalization::Scale:
      return "scale";
  }
  return "unknown";
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += (s.empty() ? "" : ",") + i;
  return s;
}

}  // namespace

int cmd_linreg(const LinRegConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Executor ex(c.workers);
    auto model = make_linreg_model(3, c.seed, {c.learning_rate, c.normalization, c.input_scale});
    const auto pairs = paper_linreg_pairs();
    const LinRegReport report = train_linreg(model, pairs, c.iterations, ex);
    const std::vector<double> question{42.0, 43.0, 44.0};
    const double prediction = predict_linreg(model, question, ex);
    const bool converged = std::abs(prediction - 45.0) < 1.0;

    out << "linreg: seed=" << c.seed << " iterations=" << c.iterations
        << " lr=" << fmt("%g", c.learning_rate) << " normalize=" << to_string(c.normalization)
        << '\n';
    const std::size_t every = c.report_every == 0 ? 1 : c.report_every;
    for (std::size_t i = 0; i < report.loss_history.size(); ++i) {
      if (i % every == 0 || i + 1 == report.loss_history.size()) {
        out << "iteration " << i << " loss " << fmt("%.10g", report.loss_history[i]) << '\n';
      }
    }
    out << "initial loss " << fmt("%.10g", report.initial_loss) << '\n';
    out << "final loss " << fmt("%.10g", report.final_loss) << '\n';
    out << "prediction for (42, 43, 44): " << fmt("%.6f", prediction) << '\n';
    out << "converged: " << (converged ? "yes" : "no") << '\n';

    write_output(c.output, [&](std::ostream& os, Format f) {
      if (f == Format::Json) {
        nlohmann::json j{{"initial_loss", report.initial_loss},
                         {"final_loss", report.final_loss},
                         {"prediction", prediction},
                         {"converged", converged},
                         {"loss_history", report.loss_history}};
        os << j.dump(2) << '\n';
      } else {
        os << "iteration,loss\n";
        for (std::size_t i = 0; i < report.loss_history.size(); ++i) {
          os << i << ',' << real(report.loss_history[i]) << '\n';
        }
      }
    });
    return converged ? kExitOk : kExitUnconverged;
  });
}

int cmd_gradcheck(const GradcheckConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Executor ex(c.workers);
    GradcheckOptions options;
    options.instances = c.instances;
    options.tolerance = c.tolerance;
    options.seed = c.seed;
    options.ops = c.ops;
    options.fault_ops = c.fault_ops;
    const auto results = run_gradcheck(options, ex);

    std::vector<std::string> failing;
    for (const auto& r : results) {
      out << r.op << '[' << r.variant << "] instances=" << r.instances
          << " max_rel_error=" << fmt("%.3e", r.max_rel_error) << ' '
          << (r.passed() ? "PASS" : "FAIL") << '\n';
      if (!r.passed() && (failing.empty() || failing.back() != r.op)) failing.push_back(r.op);
    }
    write_output(c.output, [&](std::ostream& os, Format f) {
      if (f == Format::Json) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : results) {
          arr.push_back({{"op", r.op},
                         {"variant", r.variant},
                         {"instances", r.instances},
                         {"max_rel_error", r.max_rel_error},
                         {"passed", r.passed()}});
        }
        os << arr.dump(2) << '\n';
      } else {
        os << "op,variant,instances,max_rel_error,passed\n";
        for (const auto& r : results) {
          os << r.op << ',' << r.variant << ',' << r.instances << ',' << real(r.max_rel_error) << ','
             << (r.passed() ? 1 : 0) << '\n';
        }
      }
    });
    if (!failing.empty()) {
      err << "failing ops: " << join(failing) << '\n';
      return kExitError;
    }
    out << "all " << results.size() << " cases within " << fmt("%g", c.tolerance) << '\n';
    return kExitOk;
  });
}

namespace {

struct GatedRun {
  GatedStrategy strategy;
  Tensor output = Tensor::zeros(Shape{1});
  std::string branch;
  int gate_forwards = 0;
  int left_forwards = 0;
  int right_forwards = 0;
  std::vector<double> losses;
  std::vector<Tensor> stores;
  bool untaken_unchanged = true;
};

std::vector<Tensor> gated_stores(const GatedModel& m) {
  return {m.gate_hidden.value(),
          m.gate_left.value(),
          m.gate_right.value(),
          Tensor::vector({m.gate_left_bias.value()}),
          Tensor::vector({m.gate_right_bias.value()}),
          m.left.value(),
          m.right.value()};
}

bool close_enough(const Tensor& a, const Tensor& b, double tol) {
  if (!(a.shape() == b.shape())) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > tol) return false;
  }
  return true;
}

}  // namespace

int cmd_gated(const GatedConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Executor ex(c.workers);
    Rng input_rng(c.seed, "gated/input");
    const Tensor input = input_rng.uniform_tensor(Shape{1, c.features});
    Rng target_rng(c.seed, "gated/target");
    const Tensor target = target_rng.uniform_tensor(Shape{1, c.hidden});

    std::vector<GatedRun> runs;
    for (auto strategy : {GatedStrategy::Eager, GatedStrategy::Sequential, GatedStrategy::Parallel}) {
      GatedModel model = make_gated_model(c.seed, c.features, c.hidden, c.learning_rate);
      GatedRun run{strategy};
      run.output = run_blocking(predict(gated_forward(model, input, strategy, ex)), ex);
      run.gate_forwards = model.gate_probe->load();
      run.left_forwards = model.left_probe->load();
      run.right_forwards = model.right_probe->load();
      run.branch = run.left_forwards > 0 ? "left" : "right";
      for (std::size_t i = 0; i < c.iterations; ++i) {
        const Tensor left_before = model.left.value();
        const Tensor right_before = model.right.value();
        const int left_probe = model.left_probe->load();
        const int right_probe = model.right_probe->load();
        run.losses.push_back(
            run_blocking(train(gated_loss(gated_forward(model, input, strategy, ex), target)), ex));
        const bool went_left = model.left_probe->load() > left_probe;
        const bool went_right = model.right_probe->load() > right_probe;
        const bool untaken_same = went_left ? model.right.value() == right_before
                                            : model.left.value() == left_before;
        if (went_left == went_right || !untaken_same) run.untaken_unchanged = false;
      }
      run.stores = gated_stores(model);
      runs.push_back(std::move(run));
    }

    const double tol = c.workers == 1 ? 0.0 : 1e-12;
    std::vector<std::string> problems;
    const GatedRun& eager = runs[0];
    const GatedRun& seq = runs[1];
    const GatedRun& par = runs[2];
    if (!close_enough(seq.output, par.output, tol)) problems.push_back("sequential/parallel outputs differ");
    if (!close_enough(eager.output, seq.output, tol)) problems.push_back("eager/sequential outputs differ");
    if (eager.branch != seq.branch || seq.branch != par.branch) problems.push_back("branches differ");
    for (std::size_t i = 0; i < seq.stores.size(); ++i) {
      if (!close_enough(seq.stores[i], par.stores[i], tol) ||
          !close_enough(eager.stores[i], seq.stores[i], tol)) {
        problems.push_back("weights differ between strategies after training");
        break;
      }
    }
    if (eager.gate_forwards < 2) problems.push_back("eager gate ran fewer than 2 times");
    if (seq.gate_forwards != 1 || par.gate_forwards != 1) problems.push_back("gate ran more than once");
    for (const auto& r : runs) {
      if (!r.untaken_unchanged) problems.push_back(to_string(r.strategy) + " ran or updated an untaken branch");
    }

    out << "gated: seed=" << c.seed << " workers=" << c.workers << " iterations=" << c.iterations << '\n';
    for (const auto& r : runs) {
      out << to_string(r.strategy) << ": branch=" << r.branch << " gate_forwards=" << r.gate_forwards
          << " left_forwards=" << r.left_forwards << " right_forwards=" << r.right_forwards
          << " output_sum=" << fmt("%.10g", sum_all(r.output));
      if (!r.losses.empty()) out << " final_loss=" << fmt("%.10g", r.losses.back());
      out << '\n';
    }
    write_output(c.output, [&](std::ostream& os, Format f) {
      if (f == Format::Json) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : runs) {
          std::vector<double> output(r.output.data().begin(), r.output.data().end());
          arr.push_back({{"strategy", to_string(r.strategy)},
                         {"branch", r.branch},
                         {"gate_forwards", r.gate_forwards},
                         {"left_forwards", r.left_forwards},
                         {"right_forwards", r.right_forwards},
                         {"output", output},
                         {"losses", r.losses}});
        }
        os << arr.dump(2) << '\n';
      } else {
        os << "strategy,branch,gate_forwards,left_forwards,right_forwards,output_sum\n";
        for (const auto& r : runs) {
          os << to_string(r.strategy) << ',' << r.branch << ',' << r.gate_forwards << ','
             << r.left_forwards << ',' << r.right_forwards << ',' << real(sum_all(r.output)) << '\n';
        }
      }
    });
    if (!problems.empty()) {
      for (const auto& p : problems) err << "mismatch: " << p << '\n';
      return kExitError;
    }
    out << "strategies agree\n";
    return kExitOk;
  });
}

int cmd_bench(const BenchConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::vector<BenchRecord> records;
    out << "columns workers skip ops_per_sec stddev ms_per_step\n";
    for (std::size_t columns : c.columns) {
      for (std::size_t workers : c.workers) {
        for (bool skip : c.skip) {
          BenchOptions o;
          o.columns = columns;
          o.workers = workers;
          o.skip_unmatched = skip;
          o.warmup = c.warmup;
          o.steps = c.iterations;
          o.windows = c.windows;
          o.features = c.features;
          o.learning_rate = c.learning_rate;
          o.seed = c.seed;
          o.fine_loss = c.fine_loss;
          const BenchRecord r = run_bench(o);
          records.push_back(r);
          out << r.columns << ' ' << r.workers << ' ' << (r.skip_unmatched ? "skip" : "noskip") << ' '
              << fmt("%.3f", r.ops_per_sec) << ' ' << fmt("%.3f", r.ops_per_sec_stddev) << ' '
              << fmt("%.3f", r.wall_ms_per_step_mean) << '\n';
        }
      }
    }
    write_output(c.output, [&](std::ostream& os, Format f) {
      if (f == Format::Json) {
        write_bench_json(os, records);
      } else {
        write_bench_csv(os, records);
      }
    });
    return kExitOk;
  });
}

int cmd_diamond(const DiamondConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Executor ex(c.workers);
    std::vector<DiamondReport> reports{run_diamond(c.depth, GraphMode::RefCounted, ex)};
    if (c.depth <= c.naive_limit) reports.push_back(run_diamond(c.depth, GraphMode::Naive, ex));

    out << "diamond: depth=" << c.depth << " nodes=" << reports[0].node_count << '\n';
    for (const auto& r : reports) {
      const bool naive = r.mode == GraphMode::Naive;
      out << (naive ? "naive" : "refcounted") << ": leaf_backward_calls=" << r.leaf_backward_calls;
      if (!naive) {
        out << " flushes_per_node=" << r.min_node_flushes << ".." << r.max_node_flushes
            << " total_flushes=" << r.total_flushes;
      }
      out << " final_store=" << fmt("%.17g", r.final_store) << " seconds=" << fmt("%.6f", r.seconds)
          << '\n';
    }
    if (c.depth > c.naive_limit) {
      out << "naive: skipped (depth above " << c.naive_limit << ")\n";
    }
    write_output(c.output, [&](std::ostream& os, Format f) {
      if (f == Format::Json) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : reports) {
          arr.push_back({{"mode", r.mode == GraphMode::Naive ? "naive" : "refcounted"},
                         {"depth", r.depth},
                         {"nodes", r.node_count},
                         {"leaf_backward_calls", r.leaf_backward_calls},
                         {"total_flushes", r.total_flushes},
                         {"min_node_flushes", r.min_node_flushes},
                         {"max_node_flushes", r.max_node_flushes},
                         {"final_store", r.final_store}});
        }
        os << arr.dump(2) << '\n';
      } else {
        os << "mode,depth,nodes,leaf_backward_calls,total_flushes,min_node_flushes,max_node_flushes,"
              "final_store\n";
        for (const auto& r : reports) {
          os << (r.mode == GraphMode::Naive ? "naive" : "refcounted") << ',' << r.depth << ','
             << r.node_count << ',' << r.leaf_backward_calls << ',' << r.total_flushes << ','
             << r.min_node_flushes << ',' << r.max_node_flushes << ',' << real(r.final_store) << '\n';
        }
      }
    });
    return kExitOk;
  });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tapegraph: closure-based reverse-mode AD demos and benchmarks", "tapegraph"};
  app.require_subcommand(1);

  const std::map<std::string, Format> formats{{"csv", Format::Csv}, {"json", Format::Json}};
  const std::map<std::string, Normalization> normalizations{
      {"none", Normalization::None}, {"maxabs", Normalization::MaxAbs}, {"scale", Normalization::Scale}};
  const std::map<std::string, FineLoss> fine_losses{{"sum", FineLoss::Sum}, {"mean", FineLoss::Mean}};

  std::size_t default_workers = 1;
  try {
    default_workers = default_worker_count(1);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  auto add_output = [&](CLI::App* cmd, OutputConfig& o) {
    cmd->add_option("--out", o.path, "Write machine-readable results to FILE");
    cmd->add_option("--format", o.format, "Output format for --out (csv|json)")
        ->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));
  };
  auto positive = CLI::PositiveNumber;

  LinRegConfig linreg;
  linreg.workers = default_workers;
  auto* lr_cmd = app.add_subcommand("linreg", "Train the arithmetic-progression linear regression");
  lr_cmd->add_option("--seed", linreg.seed, "Root random seed");
  lr_cmd->add_option("--workers", linreg.workers, "Executor worker threads")->check(positive);
  lr_cmd->add_option("--iterations", linreg.iterations, "Training iterations");
  lr_cmd->add_option("--lr", linreg.learning_rate, "Learning rate (0 disables training)")
      ->check(CLI::NonNegativeNumber);
  lr_cmd->add_option("--normalize", linreg.normalization, "Input normalization (maxabs|scale|none)")
      ->transform(CLI::CheckedTransformer(normalizations, CLI::ignore_case));
  lr_cmd->add_option("--input-scale", linreg.input_scale, "Factor used by --normalize scale")
      ->check(positive);
  lr_cmd->add_option("--report-every", linreg.report_every, "Print the loss every N iterations");
  add_output(lr_cmd, linreg.output);

  GradcheckConfig grad;
  grad.workers = default_workers;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare gradients against finite differences");
  gc_cmd->add_option("--seed", grad.seed, "Root random seed");
  gc_cmd->add_option("--workers", grad.workers, "Executor worker threads")->check(positive);
  gc_cmd->add_option("--iterations,--instances", grad.instances, "Random instances per case")
      ->check(positive);
  gc_cmd->add_option("--ops", grad.ops, "Comma-separated subset of ops")->delimiter(',');
  gc_cmd->add_option("--tolerance", grad.tolerance, "Maximum relative error")->check(positive);
  gc_cmd->add_option("--inject-fault", grad.fault_ops, "Corrupt the adjoint of these ops")
      ->delimiter(',')
      ->group("");
  add_output(gc_cmd, grad.output);

  GatedConfig gated;
  gated.workers = default_workers;
  auto* gt_cmd = app.add_subcommand("gated", "Run the gated network under all three strategies");
  gt_cmd->add_option("--seed", gated.seed, "Root random seed");
  gt_cmd->add_option("--workers", gated.workers, "Executor worker threads")->check(positive);
  gt_cmd->add_option("--iterations", gated.iterations, "Training iterations per strategy");
  gt_cmd->add_option("--lr", gated.learning_rate, "Learning rate")->check(positive);
  gt_cmd->add_option("--features", gated.features, "Input width")->check(positive);
  gt_cmd->add_option("--hidden", gated.hidden, "Sub-network width")->check(positive);
  add_output(gt_cmd, gated.output);

  BenchConfig bench;
  bench.workers = {default_workers};
  int skip_flag = 0;
  auto* bn_cmd = app.add_subcommand("bench", "Measure training throughput of the expert model");
  bn_cmd->add_option("--seed", bench.seed, "Root random seed");
  bn_cmd->add_option("--columns", bench.columns, "Comma-separated column counts")
      ->delimiter(',')
      ->check(positive);
  bn_cmd->add_option("--workers", bench.workers, "Comma-separated worker counts")
      ->delimiter(',')
      ->check(positive);
  bn_cmd->add_flag("--skip{1},--no-skip{-1}", skip_flag,
                   "Only skip / only no-skip (default: both)");
  bn_cmd->add_option("--iterations", bench.iterations, "Measured steps per record")->check(positive);
  bn_cmd->add_option("--warmup", bench.warmup, "Untimed steps before measuring");
  bn_cmd->add_option("--windows", bench.windows, "Timing windows for the stddev")->check(positive);
  bn_cmd->add_option("--features", bench.features, "Input feature width")->check(positive);
  bn_cmd->add_option("--lr", bench.learning_rate, "Learning rate")->check(positive);
  bn_cmd->add_option("--fine-loss", bench.fine_loss, "Combine fine losses by sum or mean")
      ->transform(CLI::CheckedTransformer(fine_losses, CLI::ignore_case));
  add_output(bn_cmd, bench.output);

  DiamondConfig diamond;
  diamond.workers = default_workers;
  auto* dm_cmd = app.add_subcommand("diamond", "Count backward work on a chain of diamonds");
  dm_cmd->add_option("--depth,--iterations", diamond.depth, "Number of diamond levels")
      ->check(positive);
  dm_cmd->add_option("--workers", diamond.workers, "Executor worker threads")->check(positive);
  dm_cmd->add_option("--naive-limit", diamond.naive_limit, "Largest depth run in naive mode");
  add_output(dm_cmd, diamond.output);

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }

  if (skip_flag > 0) bench.skip = {true};
  if (skip_flag < 0) bench.skip = {false};

  if (*lr_cmd) return cmd_linreg(linreg, out, err);
  if (*gc_cmd) return cmd_gradcheck(grad, out, err);
  if (*gt_cmd) return cmd_gated(gated, out, err);
  if (*bn_cmd) return cmd_bench(bench, out, err);
  if (*dm_cmd) return cmd_diamond(diamond, out, err);
  return kExitError;
}

}  // namespace tapegraph::cli
