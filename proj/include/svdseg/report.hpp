// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "svdseg/metrics.hpp"
#include "svdseg/peft.hpp"

namespace svdseg {

struct AblationRow;  // train.hpp

nlohmann::json dice_result_to_json(const DiceResult& r);
DiceResult dice_result_from_json(const nlohmann::json& j);

nlohmann::json ablation_to_json(const std::vector<AblationRow>& rows);

void write_json(const nlohmann::json& j, const std::filesystem::path& file);
nlohmann::json read_json(const std::filesystem::path& file);

// Emits the report bundle for a set of completed run directories (each must
// contain eval.json and param_report.json):
//   dsc_table.{json,txt,svg}   per-class DSC, one row per run, Avg. column
//   param_chart.{json,svg}     horizontal bars of trainable counts (2+ runs)
//   ablation_table.{json,txt,svg}  when an ablation.json is found
// Throws ReportError listing whatever is missing.
void emit_report(const std::vector<std::filesystem::path>& run_dirs,
                 const std::filesystem::path& out_dir);

}  // namespace svdseg
