/**
 * @file app.h
 * @brief The finetune / eval / generate / init commands over a RunSpec.
 *
 * Each command returns 0 when its artifacts were fully written and 1
 * otherwise, after printing "error [stage]: message" to err.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>

#include "mft/energy.h"
#include "mft/runspec.h"
#include "mft/tokenizer.h"

namespace mft {

using ProgressFn = std::function<void(int64_t step, int64_t total, double train_loss)>;

int cmd_finetune(RunSpec spec, std::ostream& out, std::ostream& err, const ProgressFn& progress = {});
int cmd_eval(RunSpec spec, std::ostream& out, std::ostream& err);
int cmd_generate(RunSpec spec, std::ostream& out, std::ostream& err);
/// Writes a randomly initialised model built from the runspec's model keys to `model`.
int cmd_init(RunSpec spec, std::ostream& out, std::ostream& err);

/// Dispatches on the runspec's `command` key.
int run_command(RunSpec spec, std::ostream& out, std::ostream& err, const ProgressFn& progress = {});

Tokenizer make_tokenizer(const RunSpec& spec);
/// simulated:initial:drain_active_per_h:drain_idle_per_h | fixed:percent | file:path
std::unique_ptr<PowerSource> make_power_source(const std::string& description);

}  // namespace mft
