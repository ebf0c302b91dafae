#include "kwmlp/dataset.h"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace kwmlp::data {

std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& base_dir) {
  std::vector<ManifestEntry> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ManifestError("manifest line " + std::to_string(line_no) + ": expected path<TAB>label");
    }
    ManifestEntry e;
    e.path = line.substr(0, tab);
    const std::string label = line.substr(tab + 1);
    const auto res = std::from_chars(label.data(), label.data() + label.size(), e.label);
    if (res.ec != std::errc() || res.ptr != label.data() + label.size() || e.label < 0) {
      throw ManifestError("manifest line " + std::to_string(line_no) + ": bad label '" + label +
                          "'");
    }
    std::filesystem::path p(e.path);
    if (p.is_relative() && !base_dir.empty()) e.path = (std::filesystem::path(base_dir) / p).string();
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), std::filesystem::path(path).parent_path().string());
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) out += e.path + "\t" + std::to_string(e.label) + "\n";
  return out;
}

std::vector<train::Example> load_examples(const std::vector<ManifestEntry>& entries,
                                          const dsp::MfccConfig& config) {
  std::vector<train::Example> out;
  for (const auto& e : entries) {
    const auto audio = dsp::read_wav(e.path);
    for (auto& m : dsp::audio_to_mfccs(audio, config)) out.push_back({std::move(m), e.label});
  }
  return out;
}

}  // namespace kwmlp::data
