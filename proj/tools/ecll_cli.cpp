// ecll: command-line front end for the knowledge base, lifelong job, edge
// runtime, simulator and benchmark harness.
//
// Exit codes: 0 ok, 1 usage error (help printed), 2 runtime error.

#include "ecll/ecll.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace ecll;

struct UsageError : std::runtime_error {
    UsageError(const std::string& msg, const CLI::App* cmd) : std::runtime_error(msg), cmd(cmd) {}
    const CLI::App* cmd;
};

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string kb;
};

json load_json(const std::string& path, const char* what)
{
    return detail::parse_json_text(detail::read_file(path), what);
}

void write_text(const std::string& path, const std::string& text)
{
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        fs::create_directories(parent, ec);
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    out.flush();
    if (!out) {
        fail(ErrorCode::io_failure, "cannot write '" + path + "'");
    }
}

void write_bytes(const std::string& path, const Bytes& b)
{
    write_text(path, std::string(b.begin(), b.end()));
}

void require(bool ok, const std::string& msg, const CLI::App* cmd)
{
    if (!ok) {
        throw UsageError(msg, cmd);
    }
}

JobConfig job_config(const Globals& g)
{
    JobConfig cfg = g.config.empty() ? JobConfig{} : JobConfig::from_json(load_json(g.config, "job config"));
    if (g.seed) {
        cfg.seed = *g.seed;
    }
    return cfg;
}

fs::path state_path(const Globals& g) { return fs::path(g.kb) / "job_state.json"; }

JobState load_state(const Globals& g)
{
    const auto p = state_path(g);
    return fs::exists(p) ? JobState::from_json(load_json(p.string(), "job state")) : JobState{};
}

void save_state(const Globals& g, const JobState& s) { write_text(state_path(g).string(), s.to_json().dump(2) + "\n"); }

/// Schema from --schema, else from the store's bound task space.
DatasetSchema schema_for(const std::string& schema_path, const KnowledgeBase& kb, const CLI::App* cmd)
{
    if (!schema_path.empty()) {
        return DatasetSchema::from_json(load_json(schema_path, "schema"));
    }
    require(kb.space().has_value(), "--schema is required until the knowledge base has trained once", cmd);
    return kb.space()->schema;
}

DeploySnapshot load_snapshot(const std::string& path)
{
    const auto bytes = detail::read_bytes(path);
    return DeploySnapshot::deserialize(bytes);
}

void print_eval(const EvalReport& r) { std::cout << r.to_json().dump(2) << "\n"; }

int run(int argc, char** argv)
{
    CLI::App app{"Edge-cloud lifelong learning toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Seed for splits and fits");
    app.add_option("--config", g.config, "Config file for the command");
    app.add_option("--kb", g.kb, "Knowledge base directory");

    // kb
    auto* kb_cmd = app.add_subcommand("kb", "Inspect or create a knowledge base")->require_subcommand(1);
    auto* kb_init = kb_cmd->add_subcommand("init", "Create an empty knowledge base");
    auto* kb_show = kb_cmd->add_subcommand("show", "Print the knowledge base summary");

    // job
    auto* job_cmd = app.add_subcommand("job", "Run lifelong job phases against a knowledge base")->require_subcommand(1);
    std::string schema_path, data_path, out_path;
    auto* job_train = job_cmd->add_subcommand("train", "Mine tasks and train per-task models");
    auto* job_eval = job_cmd->add_subcommand("eval", "Evaluate trained models and apply the gate");
    auto* job_deploy = job_cmd->add_subcommand("deploy", "Write a deploy snapshot");
    auto* job_update = job_cmd->add_subcommand("update", "Train, evaluate and deploy on new labeled data");
    for (auto* c : {job_train, job_eval, job_update}) {
        c->add_option("--schema", schema_path, "Schema JSON");
        c->add_option("--data", data_path, "Labeled CSV")->required();
    }
    job_deploy->add_option("--out", out_path, "Snapshot file")->required();
    job_update->add_option("--out", out_path, "Snapshot file")->required();

    // edge
    auto* edge_cmd = app.add_subcommand("edge", "One-shot edge inference against a snapshot file")->require_subcommand(1);
    std::string snapshot_path;
    double sigma = EdgeConfig{}.similarity_threshold;
    auto* edge_infer = edge_cmd->add_subcommand("infer", "Predict every row of a CSV");
    auto* edge_status = edge_cmd->add_subcommand("status", "Print counters after applying a snapshot");
    for (auto* c : {edge_infer, edge_status}) {
        c->add_option("--snapshot", snapshot_path, "Snapshot file")->required();
        c->add_option("--similarity", sigma, "Similarity threshold");
    }
    edge_infer->add_option("--data", data_path, "CSV to predict (label column may be empty)")->required();
    edge_infer->add_option("--out", out_path, "Predictions CSV (stdout if absent)");
    edge_status->add_option("--data", data_path, "Optional CSV to run through the edge first");

    // sim
    auto* sim_cmd = app.add_subcommand("sim", "Discrete-tick edge-cloud simulation")->require_subcommand(1);
    auto* sim_run = sim_cmd->add_subcommand("run", "Run a simulation config to completion");
    sim_run->add_option("--out", out_path, "Report directory")->required();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Closed / incremental / lifelong comparison")->require_subcommand(1);
    std::string job_path, summary_path;
    double train_fraction = BenchConfig{}.train_fraction;
    auto* bench_gen = bench_cmd->add_subcommand("gen", "Generate a synthetic dataset from --config");
    bench_gen->add_option("--out", out_path, "Dataset CSV")->required();
    bench_gen->add_option("--schema-out", schema_path, "Also write the schema JSON");
    auto* bench_run = bench_cmd->add_subcommand("run", "Run the three methods and write reports");
    bench_run->add_option("--data", data_path, "Labeled CSV")->required();
    bench_run->add_option("--schema", schema_path, "Schema JSON (else derived from a synthetic --config)");
    bench_run->add_option("--job", job_path, "Job config JSON");
    bench_run->add_option("--train-fraction", train_fraction, "Train share of the split");
    bench_run->add_option("--out", out_path, "Report directory")->required();
    auto* bench_report = bench_cmd->add_subcommand("report", "Rewrite report tables from a summary.json");
    bench_report->add_option("--summary", summary_path, "summary.json from bench run")->required();
    bench_report->add_option("--out", out_path, "Report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        auto need_kb = [&](const CLI::App* cmd) { require(!g.kb.empty(), "--kb is required", cmd); };

        if (kb_init->parsed() || kb_show->parsed()) {
            const auto* cmd = kb_init->parsed() ? kb_init : kb_show;
            need_kb(cmd);
            if (kb_show->parsed()) {
                if (!fs::is_directory(g.kb)) {
                    fail(ErrorCode::io_failure, "no knowledge base at '" + g.kb + "'");
                }
            }
            auto kb = KnowledgeBase::open(g.kb);
            if (kb_init->parsed() && !fs::exists(fs::path(g.kb) / "index.json")) {
                kb.save();
            }
            auto j = kb.summary();
            j["task_count"] = kb.size();
            std::cout << j.dump(2) << "\n";
            return 0;
        }

        if (job_cmd->parsed()) {
            const auto* cmd = job_train->parsed() ? job_train
                              : job_eval->parsed() ? job_eval
                              : job_deploy->parsed() ? job_deploy
                                                     : job_update;
            need_kb(cmd);
            auto kb = KnowledgeBase::open(g.kb);
            LifelongJob job(job_config(g), kb, load_state(g));
            if (job_deploy->parsed()) {
                const auto snap = job.run_deploy();
                write_bytes(out_path, snap.serialize());
                std::cout << "snapshot version " << snap.version << " with " << snap.tasks.size() << " tasks -> "
                          << out_path << "\n";
            } else {
                const auto schema = schema_for(schema_path, kb, cmd);
                const auto data = load_csv(data_path, schema);
                if (job_train->parsed()) {
                    const auto recs = job.run_train(data);
                    std::cout << "trained " << recs.size() << " tasks, kb_version " << kb.version() << "\n";
                } else if (job_eval->parsed()) {
                    print_eval(job.run_eval(data));
                } else {
                    const auto snap = job.run_update_cycle(data);
                    write_bytes(out_path, snap.serialize());
                    std::cout << "snapshot version " << snap.version << " with " << snap.tasks.size() << " tasks -> "
                              << out_path << "\n";
                }
            }
            save_state(g, job.state());
            return 0;
        }

        if (edge_cmd->parsed()) {
            EdgeRuntime edge(EdgeConfig{sigma, EdgeConfig{}.unseen_cap});
            edge.apply_snapshot(load_snapshot(snapshot_path));
            const auto& schema = edge.active()->space.schema;
            if (edge_infer->parsed()) {
                const auto data = load_csv(data_path, schema);
                std::string out = "row,route,task_key,label,similarity,snapshot_version\n";
                for (std::size_t i = 0; i < data.size(); ++i) {
                    Sample q = data.samples()[i];
                    q.label.reset();
                    const auto p = edge.infer(q);
                    out += std::to_string(i) + "," + std::string(to_string(p.route)) + "," + csv::quote(p.key.str()) +
                           "," + csv::quote(format_label(schema, p.label)) + "," + format_double(p.similarity) + "," +
                           std::to_string(p.snapshot_version) + "\n";
                }
                if (out_path.empty()) {
                    std::cout << out;
                } else {
                    write_text(out_path, out);
                }
            } else {
                if (!data_path.empty()) {
                    const auto data = load_csv(data_path, schema);
                    for (const auto& s : data.samples()) {
                        Sample q = s;
                        q.label.reset();
                        edge.infer(q);
                    }
                }
                std::cout << edge.status().dump(2) << "\n";
            }
            return 0;
        }

        if (sim_run->parsed()) {
            require(!g.config.empty(), "--config (simulation config) is required", sim_run);
            auto cfg = SimConfig::from_json(load_json(g.config, "simulation config"), fs::path(g.config).parent_path());
            if (g.seed) {
                cfg.job.seed = *g.seed;
            }
            std::optional<fs::path> kb_dir;
            if (!g.kb.empty()) {
                kb_dir = g.kb;
            }
            Simulation sim(std::move(cfg), kb_dir);
            const auto report = sim.run_to_completion();
            report.write(out_path);
            std::cout << "ran " << report.ticks << " ticks, " << report.training_cycles << " training cycles, kb_digest "
                      << report.kb_digest << " -> " << out_path << "\n";
            return 0;
        }

        if (bench_gen->parsed()) {
            require(!g.config.empty(), "--config (synthetic spec) is required", bench_gen);
            auto spec = SyntheticSpec::from_json(load_json(g.config, "synthetic spec"));
            if (g.seed) {
                spec.seed = *g.seed;
            }
            const auto d = gen_synthetic(spec);
            write_csv(out_path, d);
            if (!schema_path.empty()) {
                write_text(schema_path, d.schema().to_json().dump(2) + "\n");
            }
            std::cout << "wrote " << d.size() << " samples -> " << out_path << "\n";
            return 0;
        }

        if (bench_run->parsed()) {
            require(!schema_path.empty() || !g.config.empty(), "--schema or a synthetic --config is required", bench_run);
            const auto schema = !schema_path.empty()
                                    ? DatasetSchema::from_json(load_json(schema_path, "schema"))
                                    : SyntheticSpec::from_json(load_json(g.config, "synthetic spec")).schema();
            BenchConfig cfg;
            if (!job_path.empty()) {
                cfg.job = JobConfig::from_json(load_json(job_path, "job config"));
            }
            cfg.train_fraction = train_fraction;
            if (g.seed) {
                cfg.seed = *g.seed;
            }
            const auto run = run_bench(load_csv(data_path, schema), cfg);
            emit_report(run.result, out_path);
            for (const auto& m : run.result.methods) {
                std::cout << m.method << " " << format_double(m.overall) << "\n";
            }
            return 0;
        }

        if (bench_report->parsed()) {
            const auto r = BenchResult::from_json(load_json(summary_path, "bench summary"));
            emit_report(r, out_path);
            std::cout << "task_key,improvement_pct\n";
            for (const auto& [key, v] : r.improvements()) {
                std::cout << csv::quote(key.str()) << "," << (v ? format_double(*v) : "") << "\n";
            }
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage: " << e.what() << "\n\n" << e.cmd->help();
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cerr << app.help();
    return 1;
}

} // namespace

int main(int argc, char** argv) { return run(argc, argv); }
