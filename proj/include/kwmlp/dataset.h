#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "kwmlp/dsp.h"
#include "kwmlp/trainer.h"

namespace kwmlp::data {

// One manifest line: `path<TAB>label_index`.
struct ManifestEntry {
  std::string path;
  int label = 0;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Relative paths resolve against base_dir. Blank lines and lines starting
// with '#' are skipped; anything else malformed is an error.
std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& base_dir);
std::vector<ManifestEntry> read_manifest(const std::string& path);
std::string format_manifest(const std::vector<ManifestEntry>& entries);

// Every 1 s segment of every listed clip becomes one example with the
// clip's label. Throws dsp::DecodeError / AudioError for unreadable audio.
std::vector<train::Example> load_examples(const std::vector<ManifestEntry>& entries,
                                          const dsp::MfccConfig& config = {});

}  // namespace kwmlp::data
