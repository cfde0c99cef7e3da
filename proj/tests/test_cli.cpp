#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "scnn/modelio.hpp"

using namespace scnn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("scnn_cli_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE_MESSAGE(bool(f), "missing file: ", p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const char* cli_path() {
  const char* p = std::getenv("SCNN_CLI");
  REQUIRE_MESSAGE(p != nullptr, "SCNN_CLI must point at the cli binary");
  return p;
}

// Runs the cli with the given arguments, capturing stdout+stderr into
// `capture` (if non-null). Returns the process exit code.
int run_cli(const std::string& args, const TempDir& tmp,
            std::string* capture = nullptr) {
  fs::path log = tmp.path / "cli_output.log";
  std::string cmd = std::string("\"") + cli_path() + "\" " + args + " > \"" +
                    log.string() + "\" 2>&1";
  int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  int code = (status >= 256) ? status / 256 : status;  // WEXITSTATUS
  if (capture) *capture = slurp(log);
  return code;
}

// A small but end-to-end trainable setup: 2-class synthetic stripes at
// 32x32 (the minimum side the 5-pool architecture accepts), narrow widths.
std::string tiny_config(const fs::path& data_root, const fs::path& out_dir,
                        const std::string& train_extra = "",
                        const std::string& model_extra = "") {
  std::ostringstream os;
  os << "[run]\n"
     << "output_dir = " << out_dir.string() << "\n"
     << "seed = 5\n"
     << "jobs = 1\n"
     << "[data]\n"
     << "root = " << data_root.string() << "\n"
     << "k_folds = 2\n"
     << "[model]\n"
     << "architecture = mini_caffenet\n"
     << "width_scale = 0.1\n"
     << "fc1_units = 16\n"
     << "fc2_units = 8\n"
     << model_extra
     << "[train]\n"
     << "iterations = 12\n"
     << "base_lr = 0.02\n"
     << "batch = 4\n"
     << train_extra;
  return os.str();
}

fs::path write_config(const TempDir& tmp, const std::string& name,
                      const std::string& text) {
  fs::path p = tmp.path / name;
  std::ofstream f(p);
  f << text;
  return p;
}

// Generates a tiny synthetic dataset on disk via the cli itself.
fs::path make_data(const TempDir& tmp, const std::string& name,
                   int classes = 2, int per_class = 6, int offset = 0) {
  fs::path root = tmp.path / name;
  std::ostringstream args;
  args << "synth --classes " << classes << " --per-class " << per_class
       << " --size 32 --channels 1 --seed 3 --class-offset " << offset
       << " --out " << root.string();
  std::string log;
  int rc = run_cli(args.str(), tmp, &log);
  REQUIRE_MESSAGE(rc == 0, "synth failed: ", log);
  return root;
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("synth writes a dataset with the expected layout") {
  TempDir tmp("synth");
  fs::path root = make_data(tmp, "data", 3, 4);
  CHECK(fs::exists(root / "class_00" / "img_00.rawf"));
  CHECK(fs::exists(root / "class_02" / "img_03.rawf"));
  std::size_t files = 0;
  for (auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".rawf") ++files;
  CHECK(files == 12);
}

TEST_CASE("train produces a checkpoint, loss record and resolved config") {
  TempDir tmp("train");
  fs::path root = make_data(tmp, "data");
  fs::path out = tmp.path / "run1";
  fs::path cfg = write_config(tmp, "exp.ini", tiny_config(root, out));

  std::string log;
  int rc = run_cli("train " + cfg.string(), tmp, &log);
  CHECK_MESSAGE(rc == 0, log);

  CHECK(fs::exists(out / "model.scnn"));
  std::string record = slurp(out / "train_record.csv");
  CHECK(record.rfind("iteration,loss,lr", 0) == 0);
  CHECK(count_lines(record) == 13);  // header + 12 iterations

  std::string resolved = slurp(out / "config.resolved.ini");
  CHECK(resolved.find("modality = from_scratch") != std::string::npos);
  CHECK(resolved.find("iterations = 12") != std::string::npos);

  // the checkpoint is a loadable model with a 2-class head
  GraphF net = load_model(out / "model.scnn");
  CHECK(net.node_count() > 0);
}

TEST_CASE("training runs are byte-for-byte reproducible") {
  TempDir tmp("repro");
  fs::path root = make_data(tmp, "data");
  fs::path out_a = tmp.path / "a";
  fs::path out_b = tmp.path / "b";
  fs::path cfg_a = write_config(tmp, "a.ini", tiny_config(root, out_a));
  fs::path cfg_b = write_config(tmp, "b.ini", tiny_config(root, out_b));

  CHECK(run_cli("train " + cfg_a.string(), tmp) == 0);
  CHECK(run_cli("train " + cfg_b.string(), tmp) == 0);
  CHECK(slurp(out_a / "model.scnn") == slurp(out_b / "model.scnn"));
  CHECK(slurp(out_a / "train_record.csv") ==
        slurp(out_b / "train_record.csv"));

  // and independent of the worker-thread count
  fs::path out_c = tmp.path / "c";
  fs::path cfg_c = write_config(tmp, "c.ini", tiny_config(root, out_c));
  CHECK(run_cli("train " + cfg_c.string() + " --jobs 4", tmp) == 0);
  CHECK(slurp(out_a / "model.scnn") == slurp(out_c / "model.scnn"));
  CHECK(slurp(out_a / "train_record.csv") ==
        slurp(out_c / "train_record.csv"));
}

TEST_CASE("unknown config keys are rejected by name with exit code 1") {
  TempDir tmp("badkey");
  fs::path root = make_data(tmp, "data");
  fs::path cfg = write_config(
      tmp, "typo.ini",
      tiny_config(root, tmp.path / "out", "learning_rat = 0.01\n"));
  std::string log;
  CHECK(run_cli("train " + cfg.string(), tmp, &log) == 1);
  CHECK(log.find("train.learning_rat") != std::string::npos);
}

TEST_CASE("configuration errors all map to exit code 1") {
  TempDir tmp("cfgerr");
  fs::path root = make_data(tmp, "data");
  std::string log;

  // unreadable config file
  CHECK(run_cli("train " + (tmp.path / "nope.ini").string(), tmp, &log) == 1);

  // unknown section
  fs::path cfg1 = write_config(tmp, "sec.ini",
                               "[magic]\nx = 1\n" +
                                   tiny_config(root, tmp.path / "o1"));
  CHECK(run_cli("train " + cfg1.string(), tmp, &log) == 1);
  CHECK(log.find("magic") != std::string::npos);

  // bad value type
  fs::path cfg2 = write_config(
      tmp, "val.ini",
      tiny_config(root, tmp.path / "o2", "iterations = soon\n"));
  CHECK(run_cli("train " + cfg2.string(), tmp, &log) == 1);
  CHECK(log.find("train.iterations") != std::string::npos);

  // train refuses adaptation modalities
  fs::path cfg3 = write_config(
      tmp, "mod.ini",
      tiny_config(root, tmp.path / "o3", "modality = fine_tuning\n"));
  CHECK(run_cli("train " + cfg3.string(), tmp, &log) == 1);

  // unknown architecture
  fs::path cfg4 = write_config(
      tmp, "arch.ini",
      tiny_config(root, tmp.path / "o4", "", "architecture = resnet\n"));
  CHECK(run_cli("train " + cfg4.string(), tmp, &log) == 1);

  // unusable command line
  CHECK(run_cli("launder --money", tmp, &log) != 0);
}

TEST_CASE("data and checkpoint problems map to exit code 2") {
  TempDir tmp("dataerr");
  fs::path root = make_data(tmp, "data");
  std::string log;

  // missing dataset root
  fs::path cfg = write_config(
      tmp, "missing.ini", tiny_config(tmp.path / "nowhere", tmp.path / "o1"));
  CHECK(run_cli("train " + cfg.string(), tmp, &log) == 2);

  // missing checkpoint
  fs::path cfg2 =
      write_config(tmp, "adapt.ini", tiny_config(root, tmp.path / "o2"));
  CHECK(run_cli("adapt " + cfg2.string() + " --checkpoint " +
                    (tmp.path / "ghost.scnn").string() +
                    " --modality feature_vector",
                tmp, &log) == 2);
}

TEST_CASE("nonfinite training loss aborts with exit code 3") {
  TempDir tmp("nan");
  fs::path root = make_data(tmp, "data");
  fs::path pre_out = tmp.path / "pre";
  fs::path cfg_pre = write_config(tmp, "pre.ini", tiny_config(root, pre_out));
  REQUIRE(run_cli("train " + cfg_pre.string(), tmp) == 0);

  // poison the trunk of the checkpoint; the adapted run hits a nonfinite
  // loss on its very first batch
  GraphF net = load_model(pre_out / "model.scnn");
  bool poisoned = false;
  for (auto& [name, t] : net.parameters())
    if (name.rfind("fc2.", 0) == 0) {
      (*t)[0] = std::numeric_limits<float>::quiet_NaN();
      poisoned = true;
    }
  REQUIRE(poisoned);
  fs::path bad = tmp.path / "poisoned.scnn";
  save_model(net, bad);

  fs::path cfg =
      write_config(tmp, "nan.ini", tiny_config(root, tmp.path / "out"));
  std::string log;
  CHECK(run_cli("adapt " + cfg.string() + " --checkpoint " + bad.string() +
                    " --modality fine_tuning",
                tmp, &log) == 3);
  CHECK(log.find("error") != std::string::npos);
}

TEST_CASE("adapt with feature_vector keeps every non-head blob bit-exact") {
  TempDir tmp("adapt");
  fs::path source = make_data(tmp, "source", 3, 6, 0);
  fs::path target = make_data(tmp, "target", 2, 6, 3);

  fs::path pre_out = tmp.path / "pre";
  fs::path cfg_pre = write_config(tmp, "pre.ini", tiny_config(source, pre_out));
  REQUIRE(run_cli("train " + cfg_pre.string(), tmp) == 0);

  fs::path ad_out = tmp.path / "adapted";
  fs::path cfg_ad = write_config(tmp, "ad.ini", tiny_config(target, ad_out));
  std::string log;
  CHECK(run_cli("adapt " + cfg_ad.string() + " --checkpoint " +
                    (pre_out / "model.scnn").string() +
                    " --modality feature_vector",
                tmp, &log) == 0);

  GraphF before = load_model(pre_out / "model.scnn");
  GraphF after = load_model(ad_out / "model.scnn");
  std::string head = after.node(after.main_head()).name;
  auto pa = before.parameters();
  auto pb = after.parameters();
  REQUIRE(pa.size() == pb.size());
  bool head_changed = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].first == pb[i].first);
    bool is_head = pb[i].first.rfind(head + ".", 0) == 0;
    if (is_head) {
      if (!(*pa[i].second == *pb[i].second)) head_changed = true;
    } else {
      CHECK(*pa[i].second == *pb[i].second);  // frozen trunk: untouched bits
    }
  }
  CHECK(head_changed);

  std::string resolved = slurp(ad_out / "config.resolved.ini");
  CHECK(resolved.find("modality = feature_vector") != std::string::npos);

  // from_scratch is not an adaptation
  CHECK(run_cli("adapt " + cfg_ad.string() + " --checkpoint " +
                    (pre_out / "model.scnn").string() +
                    " --modality from_scratch",
                tmp, &log) == 1);
}

TEST_CASE("extract-features emits one row per sample with fixed columns") {
  TempDir tmp("feat");
  fs::path root = make_data(tmp, "data", 2, 5);
  fs::path out = tmp.path / "run";
  fs::path cfg = write_config(tmp, "exp.ini", tiny_config(root, out));
  REQUIRE(run_cli("train " + cfg.string(), tmp) == 0);

  fs::path csv = tmp.path / "features.csv";
  std::string log;
  CHECK(run_cli("extract-features " + (out / "model.scnn").string() + " " +
                    root.string() + " " + csv.string(),
                tmp, &log) == 0);

  std::string text = slurp(csv);
  std::istringstream lines(text);
  std::string line;
  std::size_t rows = 0, header_cols = 0;
  while (std::getline(lines, line)) {
    std::size_t cols = 1 + static_cast<std::size_t>(
                               std::count(line.begin(), line.end(), ','));
    if (rows == 0) {
      header_cols = cols;
      CHECK(line.rfind("sample_id,label,f0", 0) == 0);
    } else {
      CHECK(cols == header_cols);
    }
    ++rows;
  }
  CHECK(rows == 11);              // header + 2 classes x 5 samples
  CHECK(header_cols == 2 + 8);    // id, label, fc2_units = 8 features
  CHECK(text.find("class_00/img_00.rawf,0,") != std::string::npos);
  CHECK(text.find("class_01/img_04.rawf,1,") != std::string::npos);
}

TEST_CASE("evaluate reports accuracy and writes per-class and error files") {
  TempDir tmp("eval");
  fs::path root = make_data(tmp, "data");
  fs::path out = tmp.path / "run";
  fs::path cfg = write_config(tmp, "exp.ini", tiny_config(root, out));
  REQUIRE(run_cli("train " + cfg.string(), tmp) == 0);

  fs::path report = tmp.path / "report";
  std::string log;
  CHECK(run_cli("evaluate " + (out / "model.scnn").string() + " " +
                    root.string() + " --out " + report.string(),
                tmp, &log) == 0);
  CHECK(log.find("overall accuracy") != std::string::npos);
  CHECK(slurp(report / "per_class.csv").rfind("class,accuracy", 0) == 0);
  CHECK(slurp(report / "errors.csv").rfind("id,true,predicted", 0) == 0);

  // class-count mismatch between checkpoint and dataset is a data error
  fs::path other = make_data(tmp, "other", 4, 3);
  CHECK(run_cli("evaluate " + (out / "model.scnn").string() + " " +
                    other.string(),
                tmp, &log) == 2);
}

TEST_CASE("crossval writes folds, per-modality reports and a summary table") {
  TempDir tmp("cv");
  fs::path root = make_data(tmp, "data", 2, 6);
  fs::path out = tmp.path / "cv_out";
  fs::path cfg = write_config(
      tmp, "cv.ini",
      tiny_config(root, out, "modality = from_scratch\niterations = 6\n"));
  std::string log;
  CHECK_MESSAGE(run_cli("crossval " + cfg.string(), tmp, &log) == 0, log);

  CHECK(fs::exists(out / "folds.csv"));
  std::string accs = slurp(out / "from_scratch" / "fold_accuracies.csv");
  CHECK(accs.rfind("fold,accuracy", 0) == 0);
  CHECK(accs.find("mean,") != std::string::npos);
  CHECK(accs.find("stddev,") != std::string::npos);
  CHECK(count_lines(accs) == 5);  // header + 2 folds + mean + stddev
  CHECK(fs::exists(out / "from_scratch" / "fold_0_per_class.csv"));
  CHECK(fs::exists(out / "from_scratch" / "fold_1_errors.csv"));

  std::string summary = slurp(out / "summary.txt");
  CHECK(summary.find("mini_caffenet") != std::string::npos);
  CHECK(summary.find("from_scratch") != std::string::npos);
  CHECK(summary == log.substr(log.size() - summary.size()));

  // adaptation modalities require a checkpoint
  fs::path cfg2 = write_config(
      tmp, "cv2.ini",
      tiny_config(root, tmp.path / "cv2",
                  "modality = from_scratch,feature_vector\niterations = 4\n"));
  CHECK(run_cli("crossval " + cfg2.string(), tmp, &log) == 1);
  CHECK(log.find("checkpoint") != std::string::npos);
}
