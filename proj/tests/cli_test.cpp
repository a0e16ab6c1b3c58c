#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "ernn/cost_model.hpp"
#include "ernn/layer_spec.hpp"
#include "ernn/model_file.hpp"

namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ernn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  static std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  Outcome run(const std::string& args) const {
    const auto out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string(ERNN_BINARY) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path dir_;
};

const char* kMinimalTrain = R"({
  "task": "copy",
  "copy": {"symbols": 4, "length": 3, "delay": 4, "input_dim": 8},
  "examples": 256,
  "model": {"cell": "lstm", "hidden": [16], "block": 4, "io_block": 4},
  "quantize": {"weight_bits": 12, "data_bits": 12}
})";

TEST_F(CliTest, TrainWritesModelAndTrace) {
  write("cfg.json", kMinimalTrain);
  const auto r = run("train " + path("cfg.json").string() + " -o " + path("m.ernn").string());
  EXPECT_TRUE(r.code == 0 || r.code == 1) << r.err;
  EXPECT_EQ(r.out.rfind("# ernn-train v1\n", 0), 0u);
  ASSERT_TRUE(fs::exists(path("m.ernn")));
  const auto trace = slurp(path("m.ernn.trace"));
  EXPECT_EQ(trace.rfind("# k objective task_loss structured_loss rho residual:", 0), 0u);
  const auto file = ernn::io::read_model_file(path("m.ernn"));
  EXPECT_TRUE(file.quant_plan.has_value());
  EXPECT_EQ(std::get<ernn::rnn::LstmParams>(file.model.layers[0]).gates.block_size(), 4u);
}

TEST_F(CliTest, BlockOneConvergesImmediately) {
  write("cfg.json", R"({"examples": 32, "model": {"cell": "gru", "hidden": [8], "block": 1},
                       "train": {"epochs_per_iteration": 1}})");
  const auto r = run("train " + path("cfg.json").string() + " -o " + path("m.ernn").string() + " --trace " +
                     path("t.txt").string());
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("iterations=1\n"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("t.txt")));
}

TEST_F(CliTest, NonConvergenceHasItsOwnExitCode) {
  write("cfg.json", R"({"examples": 32, "model": {"hidden": [8], "block": 2},
                       "train": {"max_iterations": 2, "epochs_per_iteration": 1}})");
  const auto r = run("train " + path("cfg.json").string() + " -o " + path("m.ernn").string());
  EXPECT_EQ(r.code, 1) << r.err;
  EXPECT_NE(r.out.find("converged=0\n"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("m.ernn")));
}

TEST_F(CliTest, TrainUsageErrors) {
  write("cfg.json", kMinimalTrain);
  auto r = run("train " + path("cfg.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(r.out.empty());
  EXPECT_FALSE(fs::exists(path("cfg.json.trace")));

  write("bad.json", R"({"model": {"hidden": [8]}, "trian": {}})");
  r = run("train " + path("bad.json").string() + " -o " + path("m.ernn").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("trian"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("m.ernn")));

  write("part.json", R"({"model": {"hidden": [9], "block": 4}})");
  r = run("train " + path("part.json").string() + " -o " + path("m.ernn").string());
  EXPECT_EQ(r.code, 5);
  EXPECT_FALSE(fs::exists(path("m.ernn")));
}

TEST_F(CliTest, DivergenceExitsThree) {
  write("cfg.json", R"({"examples": 32, "model": {"hidden": [8], "block": 2},
                       "train": {"rho": 0, "learning_rate": 1e200, "clip_norm": 0, "max_iterations": 2}})");
  const auto r = run("train " + path("cfg.json").string() + " -o " + path("m.ernn").string());
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("last finite objective"), std::string::npos);
}

ernn::io::ModelFile small_model(std::uint64_t seed) {
  ernn::LayerSpec spec{ernn::rnn::CellType::kLstm, 8, {16, 8}, 8, 4, 8};
  auto m = ernn::make_model(spec, 3);
  ernn::randomize_model(m, seed, 0.5);
  return {m, std::nullopt, {}};
}

TEST_F(CliTest, InferIsDeterministicAndMatchesDense) {
  ernn::io::write_model_file(path("m.ernn"), small_model(3));
  std::string zeros;
  for (int t = 0; t < 5; ++t) zeros += "0 0 0 0 0 0 0 0\n";
  write("zeros.txt", zeros);
  const auto a = run("infer " + path("m.ernn").string() + " " + path("zeros.txt").string());
  const auto b = run("infer " + path("m.ernn").string() + " " + path("zeros.txt").string());
  EXPECT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 5);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::ostringstream in;
  for (int t = 0; t < 12; ++t) {
    for (int i = 0; i < 8; ++i) in << (i ? " " : "") << u(rng);
    in << "\n";
  }
  write("x.txt", in.str());
  const auto c = run("infer " + path("m.ernn").string() + " " + path("x.txt").string() + " --compare-dense");
  ASSERT_EQ(c.code, 0) << c.err;
  const auto pos = c.out.find("# max_abs_deviation_vs_dense=");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LT(std::stod(c.out.substr(pos + 29)), 1e-8);
}

TEST_F(CliTest, InferErrors) {
  ernn::io::write_model_file(path("m.ernn"), small_model(4));
  write("x.txt", "1 2 3 4 5 6 7 8\n");
  write("short.txt", "1 2 3\n");
  const auto bytes = slurp(path("m.ernn"));
  write("trunc.ernn", bytes.substr(0, bytes.size() / 2));
  write("magic.ernn", "XRNN" + bytes.substr(4));
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 1;
  write("flip.ernn", flipped);

  EXPECT_EQ(run("infer " + path("trunc.ernn").string() + " " + path("x.txt").string()).code, 4);
  EXPECT_EQ(run("infer " + path("magic.ernn").string() + " " + path("x.txt").string()).code, 4);
  EXPECT_EQ(run("infer " + path("flip.ernn").string() + " " + path("x.txt").string()).code, 4);
  EXPECT_EQ(run("infer " + path("m.ernn").string() + " " + path("short.txt").string()).code, 5);
  EXPECT_EQ(run("infer " + path("m.ernn").string() + " " + path("x.txt").string() + " --quantized").code, 2);
}

TEST_F(CliTest, InferQuantized) {
  auto f = small_model(5);
  std::vector<ernn::rnn::Sequence> calib{{std::vector<double>(8, 0.5), std::vector<double>(8, -0.5)}};
  const auto plan = ernn::quant::calibrate(f.model, calib, ernn::quant::QuantConfig{});
  ernn::io::write_model_file(path("q.ernn"), ernn::io::with_quantization(f.model, plan));
  write("x.txt", "0.5 0.5 0.5 0.5 0.5 0.5 0.5 0.5\n-0.5 -0.5 -0.5 -0.5 -0.5 -0.5 -0.5 -0.5\n");
  const auto r = run("infer " + path("q.ernn").string() + " " + path("x.txt").string() + " --quantized --compare-dense");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto pos = r.out.find("# max_abs_deviation_vs_dense=");
  ASSERT_NE(pos, std::string::npos);
  const double dev = std::stod(r.out.substr(pos + 29));
  EXPECT_GT(dev, 0.0);
  EXPECT_LT(dev, 0.05);
}

std::map<std::size_t, double> sweep(const std::string& out) {
  std::map<std::size_t, double> m;
  std::istringstream is(out.substr(out.find("# block normalized")));
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line) && line[0] != '#') {
    std::istringstream ls(line);
    std::size_t l;
    double r;
    ls >> l >> r;
    m[l] = r;
  }
  return m;
}

TEST_F(CliTest, CostSweepMatchesLayerCounts) {
  const auto r = run("cost --layers 512 --block 8 --structured");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("# ernn-cost v1\n", 0), 0u);
  const auto s = sweep(r.out);
  ASSERT_EQ(s.size(), 8u);
  // LSTM 512 on a 512 input: one 2048 x 1024 gate matrix.
  for (const auto& [l, ratio] : s)
    EXPECT_NEAR(ratio,
                static_cast<double>(ernn::cost::layer_mult_count(2048, 1024, l)) /
                    static_cast<double>(ernn::cost::layer_mult_count(2048, 1024, 1)),
                1e-9);
  EXPECT_NE(r.out.find("mults_per_step=" + std::to_string(ernn::cost::layer_mult_count(2048, 1024, 8))),
            std::string::npos);
}

TEST_F(CliTest, CostBlockOneAndErrors) {
  auto r = run("cost --cell gru --layers 64,64 --block 1 --structured");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("normalized=1\n"), std::string::npos);
  r = run("cost --layers 100 --block 16");
  EXPECT_EQ(r.code, 5);
  EXPECT_TRUE(r.out.empty());
  EXPECT_NE(r.err.find("divide"), std::string::npos);
  EXPECT_EQ(run("cost --layers 64 --cell rnn").code, 2);
  EXPECT_EQ(run("cost").code, 2);
}

TEST_F(CliTest, CostCapacityAndPes) {
  const auto r = run(
      "cost --layers 1024,1024 --input 160 --projection 512 --block 8 --bits 12 --capacity 4194304 "
      "--dsp 3600 --lut 859200 --dsp-per-pe 60 --lut-per-pe 20000 --structured");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("storage_bytes=1520640\n"), std::string::npos);
  EXPECT_NE(r.out.find("fits=1\n"), std::string::npos);
  EXPECT_NE(r.out.find("pes=42\n"), std::string::npos);
}

const char* kExplore = R"({
  "copy": {"input_dim": 16},
  "examples": 48,
  "eval_examples": 48,
  "model": {"cell": "lstm", "hidden": [16], "block": 1},
  "train": {"max_iterations": 3, "epochs_per_iteration": 1},
  "capacity": CAPACITY,
  "tolerance": TOLERANCE,
  "upper_bound": 16
})";

std::string explore_config(const std::string& capacity, const std::string& tolerance) {
  std::string s = kExplore;
  s.replace(s.find("CAPACITY"), 8, capacity);
  s.replace(s.find("TOLERANCE"), 9, tolerance);
  return s;
}

std::size_t oracle_calls(const std::string& out) {
  const auto pos = out.find("oracle_calls=");
  return std::stoul(out.substr(pos + 13));
}

TEST_F(CliTest, ExploreGenerousToleranceSwitchesToGru) {
  write("ex.json", explore_config("100000", "1.0"));
  const auto r = run("explore " + path("ex.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LE(oracle_calls(r.out), 6u);
  EXPECT_NE(r.out.find("\n3 gru gru 16 16 "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("# result gru block=16"), std::string::npos) << r.out;
  // Every scored candidate is also reported on stderr as it runs.
  EXPECT_EQ(static_cast<std::size_t>(std::count(r.err.begin(), r.err.end(), '\n')), oracle_calls(r.out));
}

TEST_F(CliTest, ExploreZeroToleranceFallsBack) {
  // 64x32 gates + 7x16 vectors: 3,240 bytes at block 1, 1,704 at block 2.
  write("ex.json", explore_config("2000", "0"));
  const auto r = run("explore " + path("ex.json").string());
  ASSERT_TRUE(r.code == 0 || r.code == 1) << r.err;
  EXPECT_NE(r.out.find("lower_bound=2 "), std::string::npos) << r.out;
  EXPECT_LE(oracle_calls(r.out), 6u);
  if (r.code == 1) {
    EXPECT_NE(r.out.find("# result lstm block=2 io_block=2 constraint_violated=1"), std::string::npos) << r.out;
  }
}

TEST_F(CliTest, ExploreInfeasible) {
  write("ex.json", explore_config("100", "0.1"));
  const auto r = run("explore " + path("ex.json").string());
  EXPECT_EQ(r.code, 6);
  EXPECT_TRUE(r.out.empty());
}

TEST_F(CliTest, SeedMakesRunsRepeatable) {
  write("cfg.json", R"({"examples": 32, "model": {"hidden": [8], "block": 2},
                       "train": {"max_iterations": 2, "epochs_per_iteration": 1}})");
  run("--seed 5 train " + path("cfg.json").string() + " -o " + path("a.ernn").string());
  run("--seed 5 train " + path("cfg.json").string() + " -o " + path("b.ernn").string());
  run("--seed 6 train " + path("cfg.json").string() + " -o " + path("c.ernn").string());
  EXPECT_EQ(slurp(path("a.ernn")), slurp(path("b.ernn")));
  EXPECT_EQ(slurp(path("a.ernn.trace")), slurp(path("b.ernn.trace")));
  EXPECT_NE(slurp(path("a.ernn")), slurp(path("c.ernn")));
}

}  // namespace
