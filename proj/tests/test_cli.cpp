#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "gatelab/probes.hpp"
#include "gatelab/trainer.hpp"

#ifndef GATELAB_CLI_PATH
#error "GATELAB_CLI_PATH must point at the CLI binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gatelab;

namespace {

const fs::path kWork = "/tmp/gl_cli";

int run(const std::string& args) {
  std::string cmd = std::string(GATELAB_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  return json::parse(f);
}

std::string tiny_plan_json(const std::string& extra = "") {
  return std::string("{\"tasks\":[\"pos\"],\"mode\":\"stl\",\"epochs\":1,\"warmup\":1,") +
         "\"seeds\":[1],\"encoder\":{\"layers\":1,\"heads\":2,\"d_model\":8,\"d_ff\":12," +
         "\"max_len\":48,\"dropout\":0.0,\"word_dropout\":0.1}" + extra + "}";
}

struct Workspace {
  Workspace() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

// shared corpus + trained run, built once for the whole binary
const fs::path& corpus_path() {
  static fs::path p = [] {
    static Workspace ws;
    fs::path out = kWork / "corpus.jsonl";
    REQUIRE(run("synth --count 30 --seed 5 --out " + out.string()) == 0);
    return out;
  }();
  return p;
}

const fs::path& trained_dir() {
  static fs::path dir = [] {
    fs::path d = kWork / "run";
    std::ofstream plan(kWork / "plan.json");
    plan << tiny_plan_json();
    plan.close();
    REQUIRE(run("train --plan " + (kWork / "plan.json").string() + " --data " +
                corpus_path().string() + " --out " + d.string()) == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(run("--help") == 0);
  CHECK(run("synth --help") == 0);
  CHECK(run("") == 1);                                  // a subcommand is required
  CHECK(run("frobnicate") == 1);                        // unknown verb
  CHECK(run("synth --out /tmp/x.jsonl") == 1);          // missing required --count
  CHECK(run("train --plan a --data b") == 1);           // missing required --out
}

TEST_CASE("runtime failures exit 2") {
  CHECK(run("train --plan /nonexistent.json --data /nonexistent.jsonl --out " +
            (kWork / "never").string()) == 2);
  CHECK(run("probe --snapshots /nonexistent.bin --data /nonexistent.jsonl --task pos --out " +
            (kWork / "never.json").string()) == 2);
  CHECK(run("report --in /nonexistent --out " + (kWork / "never.md").string()) == 2);
}

TEST_CASE("synth writes a loadable corpus plus a manifest") {
  std::vector<Sentence> corpus = read_jsonl(corpus_path().string());
  REQUIRE(corpus.size() == 30);
  for (const Sentence& s : corpus) s.validate();
  json m = read_json(kWork / "manifest.json");
  CHECK(m.at("version") == "0.1.0");
  CHECK(m.at("seeds") == json::array({5}));
  CHECK(m.at("command").get<std::string>().find("synth") != std::string::npos);
  CHECK(m.contains("config_hash"));
  // same seed reproduces the file byte for byte
  REQUIRE(run("synth --count 30 --seed 5 --out " + (kWork / "corpus2.jsonl").string()) == 0);
  std::ifstream a(corpus_path(), std::ios::binary), b(kWork / "corpus2.jsonl", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("train leaves a complete run directory") {
  const fs::path& dir = trained_dir();
  CHECK(fs::exists(dir / "plan.json"));
  CHECK(fs::exists(dir / "vocab.json"));
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "seed1" / "checkpoint.bin"));
  UtilizationGrid g = read_utilization_csv((dir / "seed1" / "utilization.csv").string());
  CHECK(g.expected.rows() == 1);
  CHECK(g.expected.cols() == 2);
  json met = read_json(dir / "seed1" / "metrics.json");
  CHECK(met.at("seed") == 1);
  CHECK(met.at("gates_active") == false);
  CHECK(met.at("kept_percent") == 100.0);
  CHECK(met.at("history").size() == 1);
  double dev = met.at("dev_score").get<double>();
  CHECK(dev >= 0.0);
  CHECK(dev <= 1.0);
}

TEST_CASE("probe rebuilds the model from a run directory") {
  fs::path rep = kWork / "probe_pos.json";
  CHECK(run("probe --model a --snapshots b --data c --task pos --out d") == 1);
  REQUIRE(run("probe --model " + trained_dir().string() + " --data " + corpus_path().string() +
              " --task pos --out " + rep.string()) == 0);
  ProbeReport r = ProbeReport::load_json(rep.string());
  CHECK(r.task == "pos");
  CHECK(r.layers == 1);
  CHECK(r.heads == 2);
  CHECK(r.runs == 1);
  REQUIRE(!r.labels.empty());
  for (double s : r.selected) {
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
  CHECK(fs::exists(kWork / "probe_pos.json.csv"));
}

TEST_CASE("analyze produces images and statistics from utilization csvs") {
  Rng rng(3);
  std::vector<fs::path> files;
  for (int i = 1; i <= 3; ++i) {
    UtilizationGrid g;
    g.expected = Tensor::zeros({2, 4});
    for (double& z : g.expected.data) z = rng.open01();
    fs::path p = kWork / ("util" + std::to_string(i) + ".csv");
    write_utilization_csv(p.string(), g, "pos", i);
    files.push_back(p);
  }
  fs::path out = kWork / "analysis";
  REQUIRE(run("analyze --runs " + files[0].string() + "," + files[1].string() + "," +
              files[2].string() + " --overlay " + files[0].string() + "," + files[1].string() +
              " --pearson " + files[0].string() + "," + files[1].string() + " --out " +
              out.string()) == 0);
  // 4x2 grid at scale 16 -> 64x32 image
  std::ifstream ppm(out / "rgb.ppm", std::ios::binary);
  std::string header(11, '\0');
  ppm.read(header.data(), 11);
  CHECK(header == "P6\n64 32\n25");
  CHECK(fs::exists(out / "overlay.ppm"));
  std::ifstream stats(out / "stats.csv");
  std::string line, all;
  while (std::getline(stats, line)) all += line + "\n";
  CHECK(all.find("adj_r2,") != std::string::npos);
  CHECK(all.find("pearson,") != std::string::npos);
  // wrong file count is a runtime failure
  CHECK(run("analyze --runs " + files[0].string() + " --out " + out.string()) == 2);
  CHECK(run("analyze --pearson " + files[0].string() + " --out " + out.string()) == 2);
}

TEST_CASE("report turns grid results into a mean±std table") {
  // hand-written grid output: two configs, two seeds each
  fs::path gdir = kWork / "grid";
  fs::create_directories(gdir);
  json results;
  results["tasks"] = {"pos", "ner"};
  results["runs"] = json::array({
      {{"config", "stl-pos"}, {"mode", "stl"}, {"tasks", {"pos"}}, {"seed", 1},
       {"dev_score", 0.8}, {"task_dev", {{"pos", 0.8}}}, {"kept_percent", 100.0}},
      {{"config", "stl-pos"}, {"mode", "stl"}, {"tasks", {"pos"}}, {"seed", 2},
       {"dev_score", 0.6}, {"task_dev", {{"pos", 0.6}}}, {"kept_percent", 100.0}},
      {{"config", "pair-pos+ner"}, {"mode", "mtl-pair"}, {"tasks", {"pos", "ner"}}, {"seed", 1},
       {"dev_score", 0.5}, {"task_dev", {{"pos", 0.4}, {"ner", 0.6}}}, {"kept_percent", 90.0}},
  });
  results["run_count"] = 3;
  std::ofstream(gdir / "grid_results.json") << results.dump(2);
  fs::path md = kWork / "report.md";
  REQUIRE(run("report --in " + gdir.string() + " --out " + md.string()) == 0);
  std::ifstream f(md);
  std::string text((std::istreambuf_iterator<char>(f)), {});
  CHECK(text.find("| stl-pos (STL) |") != std::string::npos);
  CHECK(text.find("0.700 ± 0.141*") != std::string::npos);  // mean/std of 0.8, 0.6
  CHECK(text.find("| pair-pos+ner |") != std::string::npos);
  CHECK(text.find("0.400 ± 0.000 |") != std::string::npos);
  std::ifstream csvf(md.string() + ".csv");
  std::string csv((std::istreambuf_iterator<char>(csvf)), {});
  CHECK(csv.find("stl-pos,stl,pos,0.69999999") != std::string::npos);
  CHECK(csv.find(",2\n") != std::string::npos);  // n = 2 seeds
}

TEST_CASE("grid runs the stl and pairwise matrix end to end") {
  fs::path small = kWork / "small.jsonl";
  REQUIRE(run("synth --count 12 --seed 9 --out " + small.string()) == 0);
  fs::path gout = kWork / "grid_live";
  REQUIRE(run("grid --tasks pos ner --data " + small.string() + " --out " + gout.string() +
              " --epochs 1") == 0);
  json results = read_json(gout / "grid_results.json");
  // 2 STL + 1 pair, 3 seeds each
  CHECK(results.at("run_count") == 9);
  CHECK(results.at("runs").size() == 9);
  CHECK(fs::exists(gout / "stl-pos" / "plan.json"));
  CHECK(fs::exists(gout / "pair-pos+ner" / "seed3" / "metrics.json"));
  fs::path md = kWork / "grid_live.md";
  REQUIRE(run("report --in " + gout.string() + " --out " + md.string()) == 0);
  std::ifstream f(md);
  std::string text((std::istreambuf_iterator<char>(f)), {});
  CHECK(text.find("stl-ner (STL)") != std::string::npos);
}
