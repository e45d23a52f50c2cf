#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sweep/config.hpp"
#include "sweep/errors.hpp"
#include "sweep/registry.hpp"
#include "sweep/serialize.hpp"

using namespace sweep;
namespace fs = std::filesystem;

namespace {

const std::string kCli = SWEEP_CLI;
const std::string kData = SWEEP_DATA;

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("sweep-cli-" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const fs::path log = scratch() / "out.txt";
  const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(log);
  std::stringstream ss;
  ss << f.rdbuf();
  r.out = ss.str();
  return r;
}

std::string write_file(const std::string& name, const std::string& text) {
  const fs::path p = scratch() / name;
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

TEST_CASE("trajectory CSV round trip is bit identical") {
  auto rng = make_rng(17, "csv");
  std::normal_distribution<double> N(0, 1);
  Trajectory tr;
  for (int j = 0; j <= 20; ++j) {
    tr.t.push_back(j * 0.1 + 1e-17 * j);
    tr.x.push_back(Vec::NullaryExpr(3, [&] { return N(rng) * 1e3; }));
    tr.y.push_back(Vec::NullaryExpr(1, [&] { return N(rng) * 1e-9; }));
    tr.xi.push_back(Vec::NullaryExpr(3, [&] { return std::exp(N(rng)); }));
    tr.zeta.push_back(N(rng));
    if (j < 20) tr.u.push_back(Vec::NullaryExpr(1, [&] { return N(rng); }));
  }
  std::stringstream a;
  write_trajectory_csv(a, tr);
  const Trajectory back = read_trajectory_csv(a);
  REQUIRE(back.nodes() == tr.nodes());
  for (int j = 0; j < tr.nodes(); ++j) {
    CHECK(back.t[j] == tr.t[j]);
    CHECK(back.x[j] == tr.x[j]);
    CHECK(back.y[j] == tr.y[j]);
    CHECK(back.xi[j] == tr.xi[j]);
    CHECK(back.zeta[j] == tr.zeta[j]);
  }
  for (int j = 0; j < 20; ++j) CHECK(back.u[j] == tr.u[j]);
  std::stringstream b;
  write_trajectory_csv(b, back);
  CHECK(a.str() == b.str());
}

TEST_CASE("malformed CSV is an input error") {
  std::stringstream s("t,x1\n0,1\n0.5\n");
  CHECK_THROWS_AS(read_trajectory_csv(s), InputError);
  std::stringstream bad("t,x1\n0,abc\n");
  CHECK_THROWS_AS(read_trajectory_csv(bad), InputError);
}

TEST_CASE("config files parse into problems") {
  const auto p = load_problem_file(kData + "/unit_disk.yaml");
  CHECK(p.n == 2);
  CHECK(p.r() == 1);
  CHECK_FALSE(p.truncation.enabled);
  REQUIRE(p.constants);
  // half the minimal gradient norm (1 on the unit circle), less the 1% audit margin
  CHECK(p.constants->eta_bar == doctest::Approx(0.99 * 0.5).epsilon(1e-6));
  const auto ref = registry_problem("unit-disk-push");
  CHECK(p.bundle.psi[0] == ref.bundle.psi[0]);

  const auto d = load_problem_file(kData + "/disk_control.yaml");
  CHECK(d.m == 1);
  CHECK(d.S.size() == 2);
  CHECK(d.U.contains(0.5, Vec::Constant(1, -1.0)));
}

TEST_CASE("config validation errors") {
  CHECK_THROWS_AS(parse_problem("T: 1.0\n"), InputError);
  CHECK_THROWS_AS(parse_problem("dims: {n: 2}\nT: 1\ngenerators: [[[1.0, [1, 0]]]]\nf: [[], []]\n"),
                  InputError);  // exponent vector too short
  CHECK_THROWS_AS(parse_problem("dims: {n: 2}\nT: 1\ngenerators: [[[1.0, [0, 1, 0]]]]\nf: [[]]\n"),
                  InputError);  // f has the wrong component count
  CHECK_THROWS_AS(parse_problem("dims: {n: -1}\nT: 1\n"), InputError);
  CHECK_THROWS_AS(parse_problem("dims: [unclosed\n"), InputError);
  try {
    parse_problem("dims: {n: 1}\nT: 1\ngenerators:\n  - [[1.0, [0, x]]]\nf: [[]]\n");
    FAIL("expected an input error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
}

TEST_CASE("registry problems pass check-cq") {
  for (const auto& name : registry_names()) {
    const Run r = run("check-cq --problem " + name);
    INFO(name, ": ", r.out);
    CHECK(r.code == 0);
    CHECK(r.out.find("CQ holds") != std::string::npos);
  }
  const Run r = run("check-cq --problem paper-example-6.1");
  const Json j = Json::parse(r.out);
  CHECK(j["min_simplex_norm"].get<double>() == doctest::Approx(8.0).epsilon(1e-6));
  CHECK(j["min_dominance_margin"].get<double>() == doctest::Approx(128.0).epsilon(1e-6));
}

TEST_CASE("check-cq exit codes") {
  CHECK(run("check-cq --config " + kData + "/opposing_halfplanes.yaml").code == 1);
  const std::string interior = write_file("interior.yaml",
                                          "dims: {n: 2}\nT: 1\n"
                                          "generators: [[[0.5, [0, 2, 0]], [0.5, [0, 0, 2]], [-0.5, [0, 0, 0]]]]\n"
                                          "f: [[], []]\n"
                                          "audited_constants: {eta_bar: 0.5, mu_bar: 1, L_bar: 1}\n"
                                          "start: {x0: [0.1, 0.2]}\n");
  const Run r = run("check-cq --config " + interior);
  CHECK(r.code == 0);
  CHECK(r.out.find("no active constraints") != std::string::npos);
}

TEST_CASE("input errors exit with 2") {
  CHECK(run("check-cq --problem no-such-problem").code == 2);
  CHECK(run("check-cq").code == 2);
  CHECK(run("frobnicate").code == 2);
  const Run r = run("simulate --problem unit-disk-push --x0 3,0 --gamma 1e3");
  CHECK(r.code == 2);
  CHECK(r.out.find("infeasible point") != std::string::npos);
}

TEST_CASE("solve on the disk config matches the closed form") {
  const std::string csv = (scratch() / "disk.csv").string();
  const Run r = run("solve --config " + kData + "/unit_disk.yaml --ladder 1e2:1e5:10 --tol 1e-3 --grid 400 --csv " + csv);
  REQUIRE(r.code == 0);
  const Trajectory tr = load_trajectory_csv(csv);
  double err = 0;
  for (int j = 0; j < tr.nodes(); ++j)
    err = std::max(err, std::abs(tr.x[j][0] - std::min(tr.t[j], 1.0)) + std::abs(tr.x[j][1]));
  CHECK(err <= 2e-3);
  // the built-in copy reports its closed-form error directly
  const Run b = run("solve --problem unit-disk-push --ladder 1e2:1e5:10 --tol 1e-3 --grid 400");
  REQUIRE(b.code == 0);
  CHECK(Json::parse(b.out)["sup_error_closed_form"].get<double>() <= 2e-3);
}

TEST_CASE("oracle against solve on the worked example") {
  const std::string csv = (scratch() / "worked.csv").string();
  REQUIRE(run("solve --problem paper-example-6.1 --ladder 1e3:1e4:10 --tol 5e-2 --grid 200 --csv " + csv).code == 0);
  const Run r = run("oracle --problem paper-example-6.1 --step 1e-3 --against " + csv);
  REQUIRE(r.code == 0);
  CHECK(Json::parse(r.out)["sup_difference"].get<double>() <= 1e-2);
}

TEST_CASE("check-pmp on the exported worked example") {
  const std::string csv = (scratch() / "arc.csv").string(), cert = (scratch() / "cert.json").string();
  REQUIRE(run("export-example --grid 1000 --csv " + csv + " --cert " + cert).code == 0);
  const Run ok = run("check-pmp --problem paper-example-6.1 --trajectory " + csv + " --cert " + cert);
  INFO(ok.out);
  CHECK(ok.code == 0);

  Json j = load_json(cert);
  j["lambda"] = j["lambda"].get<double>() + 1e-3;
  save_json((scratch() / "tampered.json").string(), j);
  const Run bad = run("check-pmp --problem paper-example-6.1 --trajectory " + csv + " --cert " +
                      (scratch() / "tampered.json").string());
  CHECK(bad.code == 1);
  const Json rep = Json::parse(bad.out);
  bool nontriv_failed = false;
  for (const auto& c : rep["conditions"])
    if (c["name"] == "nontriviality") nontriv_failed = !c["pass"].get<bool>();
  CHECK(nontriv_failed);

  CHECK(run("check-pmp --problem paper-example-6.1 --trajectory missing.csv --cert " + cert).code == 2);
}

TEST_CASE("the shipped certificate matches the generated one") {
  const auto shipped = load_certificate(kData + "/worked_example.cert.json");
  const auto gen = worked_example_certificate(shipped.nodes() - 1);
  CHECK(shipped.lambda == gen.lambda);
  for (int j = 0; j < gen.nodes(); ++j) CHECK(shipped.q[j] == gen.q[j]);
}

TEST_CASE("optimize exit codes") {
  const Run bad = run("optimize --config " + kData + "/contradictory.yaml --N 2 --starts 1 --ladder 1e2:1e2:10 --threads 1");
  INFO(bad.out);
  CHECK(bad.code == 1);
  const std::string flat = write_file("flat.yaml",
                                      "dims: {n: 2, m: 1}\nT: 1\n"
                                      "generators: [[[0.5, [0, 2, 0]], [0.5, [0, 0, 2]], [-0.5, [0, 0, 0]]]]\n"
                                      "f: [[[1.0, [0, 0, 0, 1]]], []]\n"
                                      "U: [{t: 0, lo: [-0.1], hi: [0.1]}]\n"
                                      "J: {poly: [[2.0, [0, 0, 0, 0]]]}\n"
                                      "audited_constants: {eta_bar: 0.5, mu_bar: 2, L_bar: 1, M_h: 1, L_psi: 1}\n"
                                      "start: {x0: [0.0, 0.0]}\n");
  const Run ok = run("optimize --config " + flat + " --N 2 --starts 2 --ladder 1e2:1e3:10 --threads 1");
  INFO(ok.out);
  CHECK(ok.code == 0);
}
