// blanket: generate | discover | evaluate | report over a task grid.
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "blanket/harness.hpp"

namespace {

struct Common {
    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "run config JSON (defaults to the desk grid)");
    cmd->add_option("--out", c.out, "output directory; overrides output_dir");
    cmd->add_option("--seed", c.seed, "master seed; overrides master_seed");
    cmd->add_option("--jobs", c.jobs, "worker threads; overrides parallelism")->check(CLI::PositiveNumber);
}

blanket::RunConfig load(const Common& c) {
    blanket::RunConfig cfg = blanket::desk_config();
    if (!c.config_path.empty()) {
        std::ifstream in(c.config_path);
        if (!in) throw std::runtime_error("cannot read config " + c.config_path);
        cfg = blanket::run_config_from_json(nlohmann::json::parse(in));
    }
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (c.seed) cfg.master_seed = *c.seed;
    if (c.jobs) cfg.parallelism = *c.jobs;
    blanket::validate(cfg);
    return cfg;
}

int report_failures(const std::vector<std::string>& failures) {
    for (const auto& f : failures) std::cerr << "failed: " << f << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Markov-boundary benchmark harness"};
    app.require_subcommand(1);

    std::string preset = "desk";
    auto* config = app.add_subcommand("config", "print a preset run config");
    config->add_option("--preset", preset, "desk | full")->check(CLI::IsMember({"desk", "full"}));

    Common gen_opts, disc_opts, eval_opts;
    auto* gen = app.add_subcommand("generate", "write task bundles and manifest.json");
    add_common(gen, gen_opts);

    std::string disc_bundles;
    auto* disc = app.add_subcommand("discover", "run boundary discovery on every bundle");
    add_common(disc, disc_opts);
    disc->add_option("--bundles", disc_bundles, "bundle directory (defaults to --out)");

    std::string eval_bundles;
    std::vector<std::string> masks{"all", "oracle", "estimated", "layered", "proximity", "perturbed"};
    auto* eval = app.add_subcommand("evaluate", "score masks with each regressor");
    add_common(eval, eval_opts);
    eval->add_option("--bundles", eval_bundles, "bundle directory (defaults to --out)");
    eval->add_option("--masks", masks, "mask sources")->delimiter(',');

    std::string records_dir = "runs";
    double grid_step = 0.02;
    auto* rep = app.add_subcommand("report", "aggregate records into CSV tables and map exports");
    rep->add_option("--out,records", records_dir, "records directory");
    rep->add_option("--grid-step", grid_step, "precision/recall lattice step");

    CLI11_PARSE(app, argc, argv);

    try {
        if (config->parsed()) {
            const auto cfg = preset == "full" ? blanket::full_benchmark_config() : blanket::desk_config();
            std::cout << blanket::to_json(cfg).dump(2) << "\n";
        } else if (gen->parsed()) {
            const auto s = blanket::cmd_generate(load(gen_opts));
            std::cout << "generated " << s.generated << ", skipped " << s.skipped << ", failed " << s.failures.size()
                      << "\n";
            return report_failures(s.failures);
        } else if (disc->parsed()) {
            const auto cfg = load(disc_opts);
            const auto s = blanket::cmd_discover(cfg, disc_bundles.empty() ? cfg.output_dir : disc_bundles);
            std::cout << "discovery runs " << s.runs << ", completed " << s.completed << "\n";
            return report_failures(s.failures);
        } else if (eval->parsed()) {
            const auto cfg = load(eval_opts);
            std::vector<blanket::MaskSource> sources;
            for (const auto& m : masks) sources.push_back(blanket::parse_mask_source(m));
            const auto s = blanket::cmd_evaluate(cfg, eval_bundles.empty() ? cfg.output_dir : eval_bundles, sources);
            std::cout << "evaluation records " << s.records << "\n";
            return report_failures(s.failures);
        } else if (rep->parsed()) {
            const auto s = blanket::cmd_report(records_dir, grid_step);
            for (const auto& n : s.notes) std::cerr << "note: " << n << "\n";
            for (const auto& f : s.files) std::cout << f << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
