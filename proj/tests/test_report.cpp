#include "envtrack/report.hpp"
#include "testutil.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace envtrack;
using namespace envtrack::report;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("number formatting round-trips") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0, 6.02214076e23, 0.0}) CHECK(std::stod(fmt(v)) == v);
    CHECK(fmt(0.5) == "0.5");
    CHECK(fmt(2.0) == "2");
    CHECK(fmt(std::nan("")) == "nan");
    CHECK(fmt(kInf) == "inf");
    CHECK(fmt(-kInf) == "-inf");
}

TEST_CASE("classification report JSON") {
    classifier::EvaluationReport rep;
    rep.subject_ids = {"a", "b"};
    rep.labels = {1, -1};
    rep.decisions = {0.4, std::nan("")};
    rep.folds = {{"a", 1.0, 200.0, 0.75}, {"b", 10.0, 400.0, 1.0}};
    rep.metrics = {0.5, 0.6, 0.7, 0.8};
    rep.roc.points = {{0, 0, kInf}, {0, 1, 0.4}, {1, 1, -0.2}};
    rep.roc.auc = 1.0;
    const Json j = to_json(rep);
    CHECK(j["accuracy"] == 0.5);
    CHECK(j["specificity"] == 0.8);
    CHECK(j["subjects"][0]["C"] == 1.0);
    CHECK(j["subjects"][1]["decision"].is_null());
    CHECK(j["roc"][0][2].is_null());
    CHECK(j["positive_class"] == "aphasia");
    CHECK(j.dump().find("NaN") == std::string::npos);
    CHECK(roc_csv(rep.roc) == "fpr,tpr,threshold\n0,0,inf\n0,1,0.4\n1,1,-0.2\n");
}

TEST_CASE("cluster result JSON") {
    clusterstats::ClusterResult res;
    res.channels = {"multivariate"};
    res.t_values = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(res.grid.size()));
    res.t_values(0, 3) = kInf;
    clusterstats::Cluster c;
    c.members = {{0, 30}, {0, 31}, {0, 32}};
    c.mass = 9.5;
    c.p_value = 0.01;
    res.clusters = {c};
    res.n_permutations = 70;
    res.exhaustive = true;
    const Json j = to_json(res);
    CHECK(j["clusters"][0]["size"] == 3);
    CHECK(j["clusters"][0]["start_ms"] == res.grid.time_ms(30));
    CHECK(j["clusters"][0]["end_ms"] == res.grid.time_ms(32));
    CHECK(j["clusters"][0]["members"][1][1] == res.grid.lag(31));
    CHECK(j["t"][0][3].is_null());
    CHECK(j["tail"] == "two");
    CHECK(j["exhaustive"] == true);
    CHECK(j["grid"]["first_lag"] == -26);
    CHECK(j["grid"]["last_lag"] == 64);
}

TEST_CASE("stability and reliability tables") {
    timecourse::StabilityCurve c;
    c.durations = {1, 3};
    c.bands[Band::theta] = {{0.5, 0.1, 4}, {0.9, std::nan(""), 4}};
    c.average = {0.5, 0.9};
    const auto csv = stability_csv(c);
    CHECK(csv == "band,duration_min,value,stderr\ntheta,1,0.5,0.1\ntheta,3,0.9,nan\naverage,1,0.5,nan\naverage,3,0.9,nan\n");
    const Json j = to_json(c);
    CHECK(j["kind"] == "within_subject");
    CHECK(j["knee_min"].is_null());
    CHECK(j["bands"]["theta"][1]["stderr"].is_null());

    const std::vector<timecourse::Reliability> rows{{Band::delta, Group::aphasia, 20, 0.8, 0.5, 0.9, 1e-4}};
    CHECK(reliability_csv(rows) == "band,group,n,r,ci_lo,ci_hi,p\ndelta,aphasia,20,0.8,0.5,0.9,1e-04\n");
}

TEST_CASE("band matrix CSV") {
    const std::vector<Band> bands{Band::delta, Band::theta};
    Eigen::MatrixXd m(2, 2);
    m << 1, 0.25, 0.25, 1;
    CHECK(matrix_csv(m, bands) == "band,delta,theta\ndelta,1,0.25\ntheta,0.25,1\n");
    CHECK_THROWS_AS(matrix_csv(Eigen::MatrixXd::Identity(3, 3), bands), InvalidInput);
}

TEST_CASE("JSON files") {
    testutil::TempDir dir("report");
    const Json j = {{"b", 1}, {"a", {1.5, "x"}}};
    write_json(dir.path() / "sub" / "x.json", j);
    const Json back = read_json(dir.path() / "sub" / "x.json");
    CHECK(back == j);
    CHECK(back.begin().key() == "b");
    write_text(dir.path() / "bad.json", "{oops");
    CHECK_THROWS_AS(read_json(dir.path() / "bad.json"), FormatError);
    CHECK_THROWS_AS(read_json(dir.path() / "missing.json"), FormatError);
}
