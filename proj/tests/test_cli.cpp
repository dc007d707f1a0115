#include <gtest/gtest.h>

#include <cstdlib>

#include <sepsplit/cli.hpp>

using namespace sepsplit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("sepsplit_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string message_of(const std::string& text) {
    try {
        (void)parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

int run_binary(const std::string& args, const std::string& env = "") {
    std::string cmd = env + " " + SEPSPLIT_BINARY + std::string(" ") + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string config(const std::string& name) { return std::string(SEPSPLIT_CONFIG_DIR) + "/" + name; }

} // namespace

TEST(Config, MinimalConfigGetsDefaults) {
    auto cfg = parse_config_text(R"({"command": "exponents"})");
    EXPECT_EQ(cfg.params.arms, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(cfg.params.omega, (std::vector<double>{2.0}));
    EXPECT_EQ(cfg.params.mu, 1e-3);
    EXPECT_EQ(cfg.numeric.K, 32);
    EXPECT_EQ(cfg.numeric.D, 4);
    EXPECT_FALSE(cfg.params.perturbation.empty());
    EXPECT_EQ(cfg.resolved["params"]["perturbation"]["preset"], "pendulum_cosine");
    // the echo parses back to the same configuration
    auto again = parse_config(cfg.resolved);
    EXPECT_EQ(again.resolved, cfg.resolved);
}

TEST(Config, RejectsRhoAtOrAbovePiOverTwo) {
    auto msg = message_of(R"({"command": "decay", "analyticity": {"rho": 1.6}})");
    EXPECT_NE(msg.find("analyticity.rho"), std::string::npos) << msg;
}

TEST(Config, RejectsDecreasingArms) {
    auto msg = message_of(R"({"command": "exponents", "params": {"arms": [2, 1]}})");
    EXPECT_NE(msg.find("params.arms"), std::string::npos) << msg;
    EXPECT_NE(msg.find("increasing"), std::string::npos) << msg;
}

TEST(Config, RejectsUnknownKeysByPath) {
    auto msg = message_of(R"({"command": "split", "numeric": {"hh": 0.1}})");
    EXPECT_NE(msg.find("numeric.hh"), std::string::npos) << msg;
    msg = message_of(R"({"command": "split", "extra": 1})");
    EXPECT_NE(msg.find("'extra'"), std::string::npos) << msg;
}

TEST(Config, TypeErrorsNameTheField) {
    auto msg = message_of(R"({"command": "split", "numeric": {"seeds": "many"}})");
    EXPECT_NE(msg.find("numeric.seeds"), std::string::npos) << msg;
    msg = message_of(R"({"command": "split", "params": {"perturbation": {"terms": [{"k": [1], "j": [1]}]}}})");
    EXPECT_NE(msg.find("terms[0]"), std::string::npos) << msg;
}

TEST(Config, ParseErrorsCarryLineContext) {
    auto msg = message_of("{\n  \"command\": \"exponents\",\n  \"params\": {,}\n}");
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Config, UnknownCommandRejected) {
    EXPECT_NE(message_of(R"({"command": "plot"})").find("unknown command"), std::string::npos);
    EXPECT_NE(message_of(R"({"params": {}})").find("command"), std::string::npos);
}

TEST(Config, ShippedConfigsValidate) {
    for (const auto& e : fs::directory_iterator(SEPSPLIT_CONFIG_DIR)) EXPECT_NO_THROW((void)load_config(e.path().string())) << e.path();
}

TEST(Io, Sha256KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Io, CylinderRoundTrip) {
    auto grid = std::make_shared<const SGrid>(SGrid::for_exponent(1.0, 15.0, 1.0, 12));
    std::mt19937_64 rng(3);
    auto f = random_cylinder_function(rng, grid, 1, 1, 2, 3, 2, true);
    auto g = cylinder_from_json(json::parse(to_json(f).dump()));
    ASSERT_EQ(g.entries().size(), f.entries().size());
    for (const auto& [key, d] : f.entries()) {
        const auto* e = g.find(key);
        ASSERT_NE(e, nullptr);
        EXPECT_EQ(e->wedge, d.wedge);
        EXPECT_EQ(e->mean, d.mean);
        EXPECT_EQ(e->tail, d.tail);
    }
    EXPECT_EQ(g.wedge_class(), f.wedge_class());
    EXPECT_TRUE(g.grid() == f.grid());
    EXPECT_THROW((void)cylinder_from_json(json{{"format", "other"}}), IoError);
}

TEST(Run, ExponentsAndManifest) {
    auto dir = temp_dir("exponents");
    auto res = run(parse_config_text(R"({"command": "exponents"})"), {.out_dir = dir.string()});
    EXPECT_NEAR(res.summary["lambdas"][0].get<double>(), 1.0, 1e-15);
    EXPECT_NEAR(res.summary["lambdas"][1].get<double>(), std::sqrt(3.0) / 2, 1e-15);
    auto manifest = json::parse(read_file(dir / "manifest.json"));
    EXPECT_EQ(manifest["command"], "exponents");
    ASSERT_EQ(manifest["files"].size(), 1u);
    for (const auto& f : manifest["files"])
        EXPECT_EQ(f["sha256"], sha256_hex(read_file(dir / f["name"].get<std::string>())));
    EXPECT_EQ(manifest["config"]["numeric"]["K"], 32);
}

TEST(Run, DeterministicArtifacts) {
    auto cfg = load_config(config("melnikov.json"));
    auto a = run(cfg, {.out_dir = temp_dir("det_a").string()});
    auto b = run(cfg, {.out_dir = temp_dir("det_b").string(), .threads = 3u});
    for (const char* name : {"melnikov.csv", "melnikov.json"})
        EXPECT_EQ(read_file(a.out_dir / name), read_file(b.out_dir / name)) << name;
}

TEST(Run, CsvUsesSeventeenDigits) {
    auto dir = temp_dir("chart");
    (void)run(load_config(config("chart.json")), {.out_dir = dir.string()});
    auto text = read_file(dir / "chart.csv");
    EXPECT_EQ(text.substr(0, text.find('\n')), "s,x,chi,psi_x,w");
    // x at s = -15: 4 atan(e^-15)
    EXPECT_NE(text.find(format_double(x_of_s(-15.0))), std::string::npos);
}

TEST(Run, HomologicalBattery) {
    auto cfg = parse_config_text(R"({"command": "homological", "numeric": {"random_inputs": 3, "K": 8, "D": 2}})");
    auto res = run(cfg, {.out_dir = temp_dir("homological").string(), .seed = 11});
    EXPECT_LT(res.summary["max_residual"].get<double>(), 1e-10);
    EXPECT_TRUE(res.summary["battery"]["bound_ok"].get<bool>());
    EXPECT_LT(res.summary["battery"]["max_residual"].get<double>(), 1e-10);
    auto s0 = cylinder_from_json(json::parse(read_file(res.out_dir / "S0hat.json")));
    std::vector<double> phi{0.4};
    std::vector<complex> z{0.0};
    EXPECT_NEAR(s0.value(0, phi, 0.0, z).real(), -std::sin(0.4) / 2.0, 1e-12);
}

TEST(Run, SplitWritesCsvAndReport) {
    auto cfg = parse_config_text(R"({"command": "split", "numeric": {"seeds": 16, "alpha_points": 8}})");
    auto res = run(cfg, {.out_dir = temp_dir("split").string()});
    auto text = read_file(res.out_dir / "split.csv");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 3 * 8);
    EXPECT_EQ(res.summary["sections"].size(), 3u);
    EXPECT_LT(res.summary["melnikov_error"].get<double>(), 1e-4);
}

TEST(Binary, ExitCodes) {
    auto dir = temp_dir("binary");
    EXPECT_EQ(run_binary("--config " + config("exponents.json") + " --out " + (dir / "ok").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "ok" / "manifest.json"));
    EXPECT_EQ(run_binary("--config " + config("melnikov_divergent.json") + " --out " + (dir / "div").string()), 3);
    auto err = json::parse(read_file(dir / "div" / "error.json"));
    EXPECT_EQ(err["error"]["kind"], "precondition");
    EXPECT_EQ(run_binary("--config " + (dir / "missing.json").string()), 2);
    fs::create_directories(dir);
    {
        std::ofstream bad(dir / "bad.json");
        bad << R"({"command": "exponents", "params": {"arms": [2, 1]}})";
    }
    EXPECT_EQ(run_binary("--config " + (dir / "bad.json").string() + " --out " + (dir / "bad").string()), 2);
    {
        std::ofstream blocker(dir / "file");
        blocker << "x";
    }
    EXPECT_EQ(run_binary("--config " + config("exponents.json") + " --out " + (dir / "file" / "sub").string()), 5);
    EXPECT_EQ(run_binary("--config " + config("exponents.json") + " --threads 0"), 2);
}

TEST(Binary, EnvironmentDefaultsOutputDirectory) {
    auto dir = temp_dir("env");
    EXPECT_EQ(run_binary("--config " + config("nonres.json"), "SEPSPLIT_OUT=" + dir.string()), 0);
    EXPECT_TRUE(fs::exists(dir / "nonres.json"));
}
