#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "nesyarith/datagen.hpp"

using namespace nesyarith;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "nesyarith-cli-tests";
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(NESYARITH_BIN) + " " + args + " > " +
                          (work_dir() / "out.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_output() {
  std::ifstream in(work_dir() / "out.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Example> read_rows(const fs::path& p) {
  std::ifstream in(p);
  return read_tsv(in);
}

}  // namespace

TEST_CASE("gen-data writes the requested rows") {
  const fs::path dir = work_dir();
  const fs::path out = dir / "data.tsv";
  REQUIRE(run("gen-data --run-dir " + (dir / "gen").string() + " --out " + out.string() +
              " --set data.rows=300 --set data.pool_roots=20") == 0);
  const auto rows = read_rows(out);
  CHECK(rows.size() == 300);
  for (const auto& ex : rows) CHECK(ex.split == Split::Train);
  CHECK(fs::exists(dir / "gen" / "config.json"));

  const fs::path again = dir / "again.tsv";
  REQUIRE(run("gen-data --run-dir " + (dir / "gen2").string() + " --out " + again.string() +
              " --set data.rows=300 --set data.pool_roots=20") == 0);
  std::ifstream a(out), b(again);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
}

TEST_CASE("gen-data with all-train ratios and a test split yields nothing") {
  const fs::path dir = work_dir();
  const fs::path out = dir / "empty.tsv";
  REQUIRE(run("gen-data --run-dir " + (dir / "gen3").string() + " --out " + out.string() +
              " --set data.rows=0 --set data.pool_roots=0") == 0);
  CHECK(read_rows(out).empty());
  CHECK(run("gen-data --run-dir " + (dir / "gen4").string() + " --out " + out.string() +
            " --set 'data.ratios={\"train\":100,\"val\":0,\"test\":0}' --set data.rows=50 "
            "--set data.pool_roots=0") == 0);
  for (const auto& ex : read_rows(out)) CHECK(ex.split == Split::Train);
}

TEST_CASE("configuration errors exit with code 2") {
  const fs::path dir = work_dir();
  std::ofstream(dir / "bad.json") << "{ nope";
  CHECK(run("gen-data --config " + (dir / "bad.json").string()) == 2);
  CHECK(run("train --set train.stepz=3 --run-dir " + (dir / "x").string()) == 2);
  CHECK(run("train --set train.lr=-1 --run-dir " + (dir / "x").string()) == 2);
  CHECK(run("--no-such-flag") == 2);
  CHECK(run("eval --condition Bogus --run-dir " + (dir / "x").string()) == 2);
  CHECK(run("eval --condition Solver --set eval.checkpoint= --run-dir " + (dir / "x").string()) == 2);
}

TEST_CASE("runtime errors exit with code 3") {
  const fs::path dir = work_dir();
  CHECK(run("eval --condition Solver --set eval.checkpoint=" + (dir / "nowhere.ckpt").string() +
            " --run-dir " + (dir / "x").string()) == 3);
}

TEST_CASE("a short training run and evaluation") {
  const fs::path dir = work_dir() / "train";
  fs::remove_all(dir);
  const std::string small =
      " --set model.d_model=16 --set model.n_heads=2 --set model.d_ff=32 --set train.batch_size=8"
      " --set train.log_every=5 --set train.val_every=10 --set train.val_batch_size=20"
      " --set train.checkpoint_every=10 --set data.pool_roots=20";
  REQUIRE(run("train --run-dir " + dir.string() + small + " --set train.steps=20") == 0);
  CHECK(fs::exists(dir / "model.ckpt"));
  CHECK(fs::exists(dir / "loss.csv"));
  CHECK(fs::exists(dir / "validation.csv"));

  const fs::path eval = work_dir() / "eval";
  REQUIRE(run("eval --condition Solver --condition OracleHybrid --run-dir " + eval.string() +
              " --set eval.checkpoint=" + (dir / "model.ckpt").string() +
              " --set eval.nesting_list=[1,3] --set eval.n_batches=2 --set eval.batch_size=5"
              " --set eval.n_outputs=[3] --threads 2") == 0);
  std::ifstream csv(eval / "report.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "condition,nesting,char_mean,char_std,seq_mean,seq_std,halted_mean,halted_std");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 4);
  CHECK(last_output().find("| OracleHybrid | 100.0±0.0 | 100.0±0.0 |") != std::string::npos);
}

TEST_CASE("gradcheck command") {
  CHECK(run("gradcheck") == 0);
  CHECK(last_output().find("PASS") != std::string::npos);
  CHECK(run("gradcheck --corrupt") == 1);
  CHECK(last_output().find("FAIL") != std::string::npos);
}
