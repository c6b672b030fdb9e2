#pragma once

// JSON and CSV renderings of analysis results. All output is deterministic: keys keep
// insertion order and doubles are printed with round-trip precision.

#include "envtrack/classifier.hpp"
#include "envtrack/clusterstats.hpp"
#include "envtrack/nullperm.hpp"
#include "envtrack/timecourse.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace envtrack::report {

using Json = nlohmann::ordered_json;

Json to_json(const LagGrid& grid);
Json to_json(const classifier::EvaluationReport& rep);
Json to_json(const classifier::Ablation& ab);
Json to_json(const clusterstats::ClusterResult& res);
Json to_json(const nullperm::NullDistribution& null);
Json to_json(const timecourse::StabilityCurve& curve);
Json to_json(const timecourse::DurationCurve& curve);
Json to_json(const timecourse::Reliability& rel);

/// Writes text atomically enough for our purposes (truncate + write); throws Error on failure.
void write_text(const std::filesystem::path& path, const std::string& text);
/// `dump(2)` plus a trailing newline.
void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);

/// Shortest round-trip decimal form ("nan"/"inf" spelled out).
std::string fmt(double v);

/// `fpr,tpr,threshold`
std::string roc_csv(const classifier::Roc& roc);
/// `band,duration_min,value,stderr`
std::string stability_csv(const timecourse::StabilityCurve& curve);
/// `band,group,n,r,ci_lo,ci_hi,p`
std::string reliability_csv(const std::vector<timecourse::Reliability>& rows);
/// Square matrix with a `band` header row and column.
std::string matrix_csv(const Eigen::MatrixXd& m, std::span<const Band> bands);

}  // namespace envtrack::report
