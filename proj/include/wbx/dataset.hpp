#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wbx/errors.hpp"
#include "wbx/geometry.hpp"
#include "wbx/pgm.hpp"
#include "wbx/preprocess.hpp"
#include "wbx/rng.hpp"

namespace wbx {

struct Annotation {
  std::string sequence_id;
  int frame_index = 0;
  bool present = false;
  BoundingBox box;  // meaningful only when present
};

struct ScanSequence {
  std::string id;
  std::vector<Frame> frames;
};

struct DatasetManifest {
  int format_version = 1;
  double mm_per_pixel = 0.1;
  std::string annotations_file = "annotations.csv";
  std::vector<std::pair<std::string, int>> sequences;  // (id, frame count)
};

struct Dataset {
  std::string root;
  DatasetManifest manifest;
  std::vector<ScanSequence> sequences;
  // annotations in (sequence, frame) order, aligned with sequences
  std::vector<std::vector<Annotation>> annotations;

  int sequence_index(const std::string& id) const {
    for (size_t i = 0; i < sequences.size(); ++i)
      if (sequences[i].id == id) return static_cast<int>(i);
    return -1;
  }
  size_t total_frames() const {
    size_t n = 0;
    for (const auto& s : sequences) n += s.frames.size();
    return n;
  }
};

// flattened frame handle used by splits and the trainer
struct FrameRef {
  int seq = 0;
  int frame = 0;
};

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("manifest: cannot open for write: " + path);
  f << "format_version " << m.format_version << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", m.mm_per_pixel);
  f << "mm_per_pixel " << buf << "\n";
  f << "annotations " << m.annotations_file << "\n";
  for (const auto& [id, count] : m.sequences) f << "sequence " << id << " " << count << "\n";
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("manifest: cannot open: " + path);
  DatasetManifest m;
  m.sequences.clear();
  std::string key;
  bool saw_version = false;
  while (f >> key) {
    if (key == "format_version") {
      f >> m.format_version;
      saw_version = true;
    } else if (key == "mm_per_pixel") {
      f >> m.mm_per_pixel;
    } else if (key == "annotations") {
      f >> m.annotations_file;
    } else if (key == "sequence") {
      std::string id;
      int count = 0;
      f >> id >> count;
      m.sequences.emplace_back(id, count);
    } else {
      throw data_error("manifest: unknown key '" + key + "' in " + path);
    }
    if (!f && !f.eof()) throw data_error("manifest: malformed value for key '" + key + "'");
  }
  if (!saw_version) throw data_error("manifest: missing format_version in " + path);
  if (m.mm_per_pixel <= 0.0) throw data_error("manifest: mm_per_pixel must be > 0");
  return m;
}

inline std::string frame_filename(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d.pgm", index);
  return buf;
}

inline void write_annotations(const std::string& path, const std::vector<Annotation>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("annotations: cannot open for write: " + path);
  f << "sequence_id,frame_index,present,x_min,y_min,x_max,y_max\n";
  char buf[160];
  for (const auto& a : rows) {
    if (a.present) {
      std::snprintf(buf, sizeof buf, "%s,%d,1,%.3f,%.3f,%.3f,%.3f", a.sequence_id.c_str(),
                    a.frame_index, a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max);
    } else {
      std::snprintf(buf, sizeof buf, "%s,%d,0,,,,", a.sequence_id.c_str(), a.frame_index);
    }
    f << buf << "\n";
  }
}

inline std::vector<Annotation> read_annotations(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("annotations: cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw data_error("annotations: empty file: " + path);
  if (line.rfind("sequence_id,frame_index,present", 0) != 0)
    throw data_error("annotations: unexpected header: " + line);
  std::vector<Annotation> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> parts;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) parts.push_back(tok);
    while (parts.size() < 7) parts.emplace_back();
    if (parts.size() != 7)
      throw data_error("annotations: line " + std::to_string(lineno) + ": expected 7 fields");
    Annotation a;
    a.sequence_id = parts[0];
    try {
      a.frame_index = std::stoi(parts[1]);
      a.present = std::stoi(parts[2]) != 0;
      if (a.present) {
        a.box.x_min = std::stod(parts[3]);
        a.box.y_min = std::stod(parts[4]);
        a.box.x_max = std::stod(parts[5]);
        a.box.y_max = std::stod(parts[6]);
      }
    } catch (const std::exception&) {
      throw data_error("annotations: line " + std::to_string(lineno) + ": malformed row: " + line);
    }
    if (a.present && !a.box.valid())
      throw data_error("annotations: line " + std::to_string(lineno) + ": degenerate box for " +
                       a.sequence_id + " frame " + std::to_string(a.frame_index));
    rows.push_back(std::move(a));
  }
  return rows;
}

// Loads a dataset directory: manifest, every frame, validated annotations.
inline Dataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.root = root;
  ds.manifest = read_manifest((fs::path(root) / "manifest.txt").string());

  for (const auto& [id, count] : ds.manifest.sequences) {
    ScanSequence seq;
    seq.id = id;
    seq.frames.reserve(count);
    for (int i = 0; i < count; ++i) {
      const fs::path p = fs::path(root) / id / frame_filename(i);
      if (!fs::exists(p)) throw data_error("dataset: missing frame file " + p.string());
      PgmImage img = read_pgm(p.string());
      Frame fr;
      fr.h = img.h;
      fr.w = img.w;
      fr.pixels = std::move(img.pixels);
      fr.sequence_id = id;
      fr.index = i;
      seq.frames.push_back(std::move(fr));
    }
    ds.sequences.push_back(std::move(seq));
  }

  const auto rows =
      read_annotations((fs::path(root) / ds.manifest.annotations_file).string());
  ds.annotations.resize(ds.sequences.size());
  for (size_t s = 0; s < ds.sequences.size(); ++s)
    ds.annotations[s].resize(ds.sequences[s].frames.size());
  std::vector<std::vector<bool>> seen(ds.sequences.size());
  for (size_t s = 0; s < ds.sequences.size(); ++s)
    seen[s].assign(ds.sequences[s].frames.size(), false);

  for (const auto& a : rows) {
    const int s = ds.sequence_index(a.sequence_id);
    if (s < 0) throw data_error("annotations: unknown sequence '" + a.sequence_id + "'");
    if (a.frame_index < 0 || a.frame_index >= static_cast<int>(ds.sequences[s].frames.size()))
      throw data_error("annotations: frame index out of range: " + a.sequence_id + " frame " +
                       std::to_string(a.frame_index));
    const Frame& fr = ds.sequences[s].frames[a.frame_index];
    if (a.present && (a.box.x_min < 0 || a.box.y_min < 0 || a.box.x_max > fr.w ||
                      a.box.y_max > fr.h))
      throw data_error("annotations: box out of image bounds: " + a.sequence_id + " frame " +
                       std::to_string(a.frame_index));
    ds.annotations[s][a.frame_index] = a;
    seen[s][a.frame_index] = true;
  }
  for (size_t s = 0; s < seen.size(); ++s)
    for (size_t i = 0; i < seen[s].size(); ++i)
      if (!seen[s][i])
        throw data_error("annotations: missing row for " + ds.sequences[s].id + " frame " +
                         std::to_string(i));
  return ds;
}

inline std::vector<FrameRef> all_frames(const Dataset& ds) {
  std::vector<FrameRef> out;
  for (size_t s = 0; s < ds.sequences.size(); ++s)
    for (size_t i = 0; i < ds.sequences[s].frames.size(); ++i)
      out.push_back({static_cast<int>(s), static_cast<int>(i)});
  return out;
}

struct SplitResult {
  std::vector<FrameRef> train, val, test;
};

// Seeded frame-level split by the given ratio (default 64:16:20).
inline SplitResult split_frames(const std::vector<FrameRef>& frames, uint64_t seed,
                                double train_frac = 0.64, double val_frac = 0.16) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
    throw config_error("split: fractions must be non-negative and sum to <= 1");
  std::vector<FrameRef> shuffled = frames;
  Rng rng = derive_rng(seed, "split");
  for (size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.uniform_int(i)]);
  const size_t n = shuffled.size();
  const size_t n_train = static_cast<size_t>(std::llround(n * train_frac));
  const size_t n_val = static_cast<size_t>(std::llround(n * val_frac));
  SplitResult out;
  out.train.assign(shuffled.begin(), shuffled.begin() + n_train);
  out.val.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
  out.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
  return out;
}

struct SubjectFold {
  int test_subject = 0;  // sequence index held out
  std::vector<FrameRef> train, test;
};

// One fold per subject: train on the others, test on the held-out one.
inline std::vector<SubjectFold> leave_one_subject_out(const Dataset& ds) {
  std::vector<SubjectFold> folds;
  for (size_t held = 0; held < ds.sequences.size(); ++held) {
    SubjectFold fold;
    fold.test_subject = static_cast<int>(held);
    for (size_t s = 0; s < ds.sequences.size(); ++s)
      for (size_t i = 0; i < ds.sequences[s].frames.size(); ++i) {
        const FrameRef ref{static_cast<int>(s), static_cast<int>(i)};
        (s == held ? fold.test : fold.train).push_back(ref);
      }
    folds.push_back(std::move(fold));
  }
  return folds;
}

}  // namespace wbx
