// sepsplit: batch command-line front end.

#include <iostream>

#include <CLI11.hpp>

#include <sepsplit/cli.hpp>

namespace {

void report_error(sepsplit::ErrorKind kind, const std::string& message, const std::filesystem::path& out_dir) {
    const auto j = sepsplit::error_json(kind, message);
    std::cerr << j.dump() << "\n";
    if (out_dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    std::ofstream f(out_dir / "error.json", std::ios::binary | std::ios::trunc);
    if (f) f << j.dump(2) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Separatrix splitting experiments: exponents, chart, Riccati, Melnikov, homological solvers, "
                 "direct splitting measurement."};
    std::string config_path, command, out_dir;
    unsigned threads = 0;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON experiment configuration")->required();
    app.add_option("--command", command, "override the command named in the config");
    app.add_option("--out", out_dir, "output directory (default: output.dir, then $SEPSPLIT_OUT, then ./sepsplit_out)");
    app.add_option("--threads", threads, "worker threads (overrides numeric.threads)")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "seed for randomized batteries");
    app.set_version_flag("--version", std::string(sepsplit::kVersion));
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    std::filesystem::path where = out_dir;
    try {
        auto cfg = sepsplit::load_config(config_path);
        if (!command.empty()) {
            auto j = cfg.resolved;
            j["command"] = command;
            cfg = sepsplit::parse_config(j);
        }
        sepsplit::RunOptions opt;
        opt.out_dir = out_dir;
        if (threads > 0) opt.threads = threads;
        opt.seed = seed;
        where = sepsplit::resolve_out_dir(cfg, opt);
        auto res = sepsplit::run(std::move(cfg), opt);
        std::cout << res.summary.dump(2) << "\n";
        return 0;
    } catch (const sepsplit::Error& e) {
        report_error(e.kind(), e.what(), where);
        return sepsplit::exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", {{"kind", "internal"}, {"message", e.what()}, {"exit_code", 1}}}}.dump()
                  << "\n";
        return 1;
    }
}
