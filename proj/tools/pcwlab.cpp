// pcwlab: a small laboratory for parallel-context-window inference.
//
// Subcommands:
//   make-model      initialize a toy decoder model and save it
//   run-classify    few-shot label scoring over a classification dataset
//   run-cot         few-shot chain-of-thought generation with exact match
//   oracle-check    run the randomized self-checks
//   inspect-layout  print positions and the visibility matrix for a layout
//
// stdout carries results (tables, JSON); progress goes to stderr. Exit codes:
// 0 success, 1 a check or run reported failure, 2 usage/config/data errors.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <pcw/cli.hpp>
#include <pcw/dataset.hpp>
#include <pcw/harness.hpp>
#include <pcw/model.hpp>
#include <pcw/oracle.hpp>
#include <pcw/report.hpp>

namespace {

struct MakeModelArgs {
    std::string out;
    std::string pos = "rotary";
    pcw::ModelConfig cfg;
};

int cmd_make_model(const MakeModelArgs& args) {
    pcw::ModelConfig cfg = args.cfg;
    if (args.pos == "rotary")
        cfg.pos_scheme = pcw::PosScheme::Rotary;
    else if (args.pos == "absolute")
        cfg.pos_scheme = pcw::PosScheme::Absolute;
    else
        pcw::fail("InvalidConfig", "unknown --pos \"" + args.pos + "\" (expected rotary|absolute)");

    const pcw::Model model = pcw::build_model(cfg);
    pcw::save_model(model, args.out);

    nlohmann::ordered_json j;
    j["path"] = args.out;
    j["pos_scheme"] = args.pos;
    j["parameters"] = model.parameter_count();
    j["bytes"] = pcw::serialize_model(model).size();
    std::fputs((j.dump() + "\n").c_str(), stdout);
    std::fprintf(stderr, "wrote %s\n", args.out.c_str());
    return 0;
}

int cmd_run_classify(const pcw::RunConfig& run) {
    if (run.data_path.empty()) pcw::fail("InvalidConfig", "--data is required");
    const pcw::EvalOptions opts = pcw::to_eval_options(run, /*cot=*/false);
    const pcw::ClassificationDataset ds = pcw::load_classification(run.data_path);
    const pcw::Model model = pcw::load_model(pcw::resolve_model_path(run));

    std::fprintf(stderr, "run-classify: %s on %s, %zu seeds, cap %zu, jobs %zu\n",
                 run.method.c_str(), ds.name.c_str(), opts.seeds.size(), opts.cap, opts.jobs);
    const pcw::EvalReport report =
        pcw::evaluate_classification(pcw::ModelEngine(model, opts, ds.label_set), ds, opts);

    std::fputs(pcw::summary_header().c_str(), stdout);
    std::fputs(pcw::summary_row(report).c_str(), stdout);
    if (!run.out_path.empty()) {
        pcw::write_report(report, run.out_path);
        std::fprintf(stderr, "wrote %s\n", run.out_path.c_str());
    }
    return 0;
}

int cmd_run_cot(const pcw::RunConfig& run) {
    if (run.data_path.empty()) pcw::fail("InvalidConfig", "--data is required");
    if (run.engine != "model" && run.engine != "gold-echo")
        pcw::fail("InvalidConfig", "unknown --engine \"" + run.engine + "\" (expected model|gold-echo)");
    const pcw::EvalOptions base = pcw::to_eval_options(run, /*cot=*/true);
    const pcw::CotDataset ds = pcw::load_cot(run.data_path);

    std::vector<std::size_t> sweep;
    if (run.pw_sweep.empty())
        sweep.push_back(base.num_windows);
    else
        sweep = pcw::parse_size_list(run.pw_sweep);

    pcw::Model model;
    if (run.engine == "model") model = pcw::load_model(pcw::resolve_model_path(run));

    std::fputs(pcw::summary_header().c_str(), stdout);
    for (std::size_t windows : sweep) {
        pcw::EvalOptions opts = base;
        opts.num_windows = windows;
        if (!run.pw_sweep.empty()) opts.method = pcw::Method::PCW;
        std::fprintf(stderr, "run-cot: %s windows=%zu on %s, %zu seeds, cap %zu, jobs %zu\n",
                     pcw::method_name(opts.method).c_str(), windows, ds.name.c_str(),
                     opts.seeds.size(), opts.cap, opts.jobs);

        const pcw::EvalReport report =
            run.engine == "gold-echo"
                ? pcw::evaluate_cot(pcw::GoldEchoEngine(ds), ds, opts)
                : pcw::evaluate_cot(pcw::ModelEngine(model, opts), ds, opts);

        std::fputs(pcw::summary_row(report).c_str(), stdout);
        if (!run.out_path.empty()) {
            const std::string path = sweep.size() > 1
                                         ? pcw::sweep_out_path(run.out_path, windows)
                                         : run.out_path;
            pcw::write_report(report, path);
            std::fprintf(stderr, "wrote %s\n", path.c_str());
        }
    }
    return 0;
}

int cmd_oracle_check(std::uint64_t seed, bool inject_fault) {
    pcw::OracleOptions options;
    options.seed = seed;
    options.inject_fault = inject_fault;
    const std::vector<pcw::OracleResult> results = pcw::run_all_oracles(options);

    bool all_passed = true;
    for (const auto& r : results) {
        std::printf("%s %-20s max_dev=%.3e tol=%.3e cases=%zu\n",
                    r.passed ? "[ok]  " : "[FAIL]", r.name.c_str(), r.max_deviation,
                    r.tolerance, r.cases);
        if (!r.passed) {
            std::printf("       %s\n", r.detail.c_str());
            all_passed = false;
        }
    }
    return all_passed ? 0 : 1;
}

int cmd_inspect_layout(const std::string& windows, std::size_t test_len) {
    const std::vector<std::size_t> lens = pcw::parse_size_list(windows);
    const pcw::WindowLayout layout = pcw::build_parallel_layout(lens, test_len);

    std::string positions;
    for (const auto& seg : layout.segments) {
        if (!positions.empty()) positions += " | ";
        for (std::size_t i = 0; i < seg.length; ++i) {
            if (i) positions += ' ';
            positions += std::to_string(layout.position_ids[seg.start + i]);
        }
    }
    std::printf("positions: %s\n", positions.c_str());
    std::printf("windows: %zu  p_max: %d  total: %zu\n", layout.num_windows, layout.p_max,
                layout.total_len);
    for (std::size_t q = 0; q < layout.total_len; ++q) {
        std::string row;
        for (std::size_t k = 0; k < layout.total_len; ++k) {
            if (k) row += ' ';
            row += layout.allowed(q, k) ? 'x' : '.';
        }
        std::printf("%s\n", row.c_str());
    }
    return 0;
}

// The config file must lose to explicit flags, so it is applied to the
// defaults before CLI11 parses the command line.
void preapply_config(int argc, char** argv, pcw::RunConfig& run) {
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc) {
            pcw::apply_json_config(run, argv[i + 1]);
            return;
        }
        const std::string prefix = "--config=";
        if (arg.rfind(prefix, 0) == 0) {
            pcw::apply_json_config(run, arg.substr(prefix.size()));
            return;
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"parallel context window laboratory"};
    app.set_version_flag("--version", std::string("pcwlab ") + pcw::kBinaryVersion +
                                          " (report schema " +
                                          std::to_string(pcw::kReportSchema) + ")");
    app.require_subcommand(1);

    MakeModelArgs mk;
    auto* make_model = app.add_subcommand("make-model", "initialize and save a toy model");
    make_model->add_option("--out", mk.out, "model file to write")->required();
    make_model->add_option("--vocab", mk.cfg.vocab_size, "vocabulary size");
    make_model->add_option("--d-model", mk.cfg.d_model, "embedding width");
    make_model->add_option("--heads", mk.cfg.n_heads, "attention heads");
    make_model->add_option("--layers", mk.cfg.n_layers, "transformer layers");
    make_model->add_option("--d-ff", mk.cfg.d_ff, "feed-forward width");
    make_model->add_option("--max-pos", mk.cfg.max_position, "position budget");
    make_model->add_option("--pos", mk.pos, "rotary|absolute");
    make_model->add_option("--seed", mk.cfg.init_seed, "init seed");

    pcw::RunConfig classify_run;
    classify_run.num_windows = 3; // classification runs default to three windows
    std::string config_path; // accepted so CLI11 does not reject the flag
    auto* classify = app.add_subcommand("run-classify", "few-shot label scoring");
    classify->add_option("--config", config_path, "JSON config file (flags override it)");
    classify->add_option("--model", classify_run.model_path, "model file");
    classify->add_option("--data", classify_run.data_path, "classification jsonl");
    classify->add_option("--out", classify_run.out_path, "report file to write");
    classify->add_option("--method", classify_run.method, "seq|pcw|pe");
    classify->add_option("--windows", classify_run.num_windows, "parallel windows");
    classify->add_option("--shots", classify_run.shots, "demonstrations per run");
    classify->add_option("--seeds", classify_run.seeds, "comma list of seeds");
    classify->add_option("--num-seeds", classify_run.num_seeds, "use seeds 0..N-1");
    classify->add_option("--cap", classify_run.cap, "max samples per seed");
    classify->add_option("--scoring", classify_run.scoring, "raw-logit|log-prob");
    classify->add_option("--strategy", classify_run.strategy, "even|maxfill");
    classify->add_option("--split", classify_run.split, "test|train");
    classify->add_option("--jobs", classify_run.jobs, "parallel seed workers");
    classify->add_flag("--keep-samples", classify_run.keep_samples, "record per-sample rows");
    classify->add_flag("--pcw-single", classify_run.pcw_single, "one demonstration per window");

    pcw::RunConfig cot_run;
    cot_run.cap = 500; // generation runs default to a lower sample cap
    auto* cot = app.add_subcommand("run-cot", "few-shot generation with exact match");
    cot->add_option("--config", config_path, "JSON config file (flags override it)");
    cot->add_option("--model", cot_run.model_path, "model file");
    cot->add_option("--data", cot_run.data_path, "cot jsonl");
    cot->add_option("--out", cot_run.out_path, "report file to write");
    cot->add_option("--method", cot_run.method, "seq|pcw");
    cot->add_option("--windows", cot_run.num_windows, "parallel windows");
    cot->add_option("--pw-sweep", cot_run.pw_sweep, "comma list of window counts to sweep");
    cot->add_option("--shots", cot_run.shots, "demonstrations per run");
    cot->add_option("--seeds", cot_run.seeds, "comma list of seeds");
    cot->add_option("--num-seeds", cot_run.num_seeds, "use seeds 0..N-1");
    cot->add_option("--cap", cot_run.cap, "max samples per seed");
    cot->add_option("--strategy", cot_run.strategy, "even|maxfill");
    cot->add_option("--max-new", cot_run.max_new, "decode budget");
    cot->add_option("--jobs", cot_run.jobs, "parallel seed workers");
    cot->add_option("--engine", cot_run.engine, "model|gold-echo");
    cot->add_flag("--keep-samples", cot_run.keep_samples, "record per-sample rows");
    cot->add_flag("--pcw-single", cot_run.pcw_single, "one demonstration per window");

    std::uint64_t oracle_seed = 2024;
    bool inject_fault = false;
    auto* oracle = app.add_subcommand("oracle-check", "run the randomized self-checks");
    oracle->add_option("--seed", oracle_seed, "randomization seed");
    oracle->add_flag("--inject-fault", inject_fault,
                     "corrupt one case to prove the checks catch it");

    std::string inspect_windows;
    std::size_t inspect_test = 1;
    auto* inspect = app.add_subcommand("inspect-layout", "print a layout's geometry");
    inspect->add_option("--windows", inspect_windows, "comma list of window lengths")
        ->required();
    inspect->add_option("--test", inspect_test, "test segment length")->required();

    try {
        preapply_config(argc, argv, classify_run);
        preapply_config(argc, argv, cot_run);
        app.parse(argc, argv);

        if (*make_model) return cmd_make_model(mk);
        if (*classify) return cmd_run_classify(classify_run);
        if (*cot) return cmd_run_cot(cot_run);
        if (*oracle) return cmd_oracle_check(oracle_seed, inject_fault);
        if (*inspect) return cmd_inspect_layout(inspect_windows, inspect_test);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const pcw::Error& e) {
        std::fputs(pcw::error_json(e).c_str(), stdout);
        return 2;
    }
}
