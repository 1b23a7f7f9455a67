#pragma once

#include <map>
#include <string>

#include "uamsa/data.hpp"
#include "uamsa/train.hpp"

namespace uamsa {

// Fully-resolved run configuration: model + training + loss + synthesis.
// Parsed from a line-oriented `key = value` file; CLI flags override file
// keys; unknown keys are rejected. Every run writes the resolved set back as
// a config echo that reproduces the run when re-fed.
struct RunConfig {
    ModelSpec spec;
    TrainConfig train;
    SynthConfig synth;
    Modality modality = Modality::SYNTH;
    int threads = 0; // 0 keeps the OpenMP default; 1 is strict single-threaded
};

using KeyValues = std::map<std::string, std::string>;

// Reads `key = value` lines; '#' starts a comment; keys are not validated
// here (merging happens first).
KeyValues read_config_file(const std::string& path);

// Defaults -> desk-profile defaults (when desk_profile = 1) -> explicit keys.
// Rejects unknown keys and malformed values. lambda_u defaults to the
// modality preset when not given explicitly.
RunConfig resolve_config(const KeyValues& keys);

std::string echo_text(const RunConfig& cfg);
void write_echo(const std::string& path, const RunConfig& cfg);

} // namespace uamsa
