#include "envtrack/io.hpp"
#include "testutil.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace envtrack;
namespace fs = std::filesystem;

TEST_CASE("matrix round trip is exact at float32 precision") {
    testutil::TempDir dir("io");
    const Eigen::MatrixXd m = testutil::gaussian(37, 3, 5);
    const Recording r(m, 128.0, {"Fz", "Cz", "Pz"}, SignalKind::eeg);
    io::write_matrix(r, dir / "x.f32");
    CHECK(fs::exists(dir / "x.json"));
    CHECK(fs::file_size(dir / "x.f32") == 37 * 3 * 4);
    for (const char* name : {"x", "x.f32", "x.json"}) {
        const Recording back = io::read_matrix(dir / name);
        CHECK(back.fs() == 128.0);
        CHECK(back.channel_names() == r.channel_names());
        CHECK(back.kind() == SignalKind::eeg);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                CHECK(back.samples()(i, c) == static_cast<double>(static_cast<float>(m(i, c))));
    }
}

TEST_CASE("payload is sample-major little-endian float32") {
    testutil::TempDir dir("io");
    Eigen::MatrixXd m(2, 2);
    m << 1.0, 2.0, 3.0, -0.5;
    io::write_matrix(Recording(m, 100.0, {"a", "b"}, SignalKind::eeg), dir / "m.f32");
    std::ifstream in(dir / "m.f32", std::ios::binary);
    unsigned char b[16];
    in.read(reinterpret_cast<char*>(b), 16);
    // 2.0f = 0x40000000 as the second word, 3.0f = 0x40400000 as the third
    CHECK(b[4] == 0x00);
    CHECK(b[7] == 0x40);
    CHECK(b[10] == 0x40);
    CHECK(b[11] == 0x40);
}

TEST_CASE("malformed matrices are rejected") {
    testutil::TempDir dir("io");
    io::write_matrix(Recording(testutil::gaussian(10, 2, 1), 128.0, {"a", "b"}, SignalKind::eeg), dir / "m.f32");
    fs::resize_file(dir / "m.f32", 10 * 2 * 4 - 4);
    CHECK_THROWS_AS(io::read_matrix(dir / "m"), FormatError);
    {
        std::ofstream out(dir / "bad.json");
        out << R"({"version":9,"fs":1,"rows":0,"cols":0,"channels":[],"kind":"eeg"})";
    }
    std::ofstream(dir / "bad.f32").close();
    CHECK_THROWS_AS(io::read_matrix(dir / "bad"), FormatError);
    CHECK_THROWS_AS(io::read_matrix(dir / "missing"), FormatError);
}

TEST_CASE("TMIF files keep the lag grid") {
    testutil::TempDir dir("io");
    Tmif t;
    t.grid = LagGrid::from_lags(128.0, -3, 4);
    t.rows = {"multivariate"};
    t.values = Eigen::RowVectorXd::LinSpaced(8, 0.0, 0.7);
    io::write_tmif(t, dir / "t.f32");
    const Tmif back = io::read_tmif(dir / "t");
    CHECK(back.grid == t.grid);
    CHECK(back.is_multivariate());
    CHECK(back.values(0, 7) == doctest::Approx(0.7).epsilon(1e-7));
    io::write_matrix(Recording(testutil::gaussian(4, 1, 1), 128.0, {"a"}, SignalKind::eeg), dir / "e.f32");
    CHECK_THROWS_AS(io::read_tmif(dir / "e"), FormatError);

    io::write_tmif_csv(t, dir / "t.csv");
    std::ifstream in(dir / "t.csv");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "lag_ms,value");
    CHECK(first.rfind("-23.4375,", 0) == 0);
}

TEST_CASE("WAV reading") {
    testutil::TempDir dir("io");
    std::vector<double> x{0.0, 0.5, -0.5, 0.25, -1.0};
    io::write_wav_float32(x, 16000.0, dir / "f.wav");
    const Recording f = io::read_wav(dir / "f.wav");
    CHECK(f.fs() == 16000.0);
    CHECK(f.kind() == SignalKind::audio);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(f.samples()(static_cast<Eigen::Index>(i), 0) == x[i]);

    io::write_wav_pcm16(x, 8000.0, dir / "p.wav");
    const Recording p = io::read_wav(dir / "p.wav");
    CHECK(p.samples()(1, 0) == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(p.samples()(4, 0) == -1.0);

    std::ofstream(dir / "junk.wav") << "not a wav file at all";
    CHECK_THROWS_AS(io::read_wav(dir / "junk.wav"), FormatError);
}

TEST_CASE("manifest round trip with relative paths") {
    testutil::TempDir dir("io");
    const auto eeg = dir / "s1_eeg.f32";
    io::write_matrix(Recording(testutil::gaussian(20, 2, 3), 512.0, {"Fz", "Cz"}, SignalKind::eeg), eeg);
    io::CohortManifest m;
    m.fs = 512.0;
    m.channel_selection = {"Fz", "Cz"};
    io::ManifestSubject s;
    s.id = "s1";
    s.group = Group::aphasia;
    s.age = 71.5;
    s.eeg = eeg;
    m.subjects.push_back(s);
    io::save_manifest(m, dir / "manifest.json");

    std::ifstream in(dir / "manifest.json");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"s1_eeg.f32\"") != std::string::npos);
    CHECK(text.find(dir.path().string()) == std::string::npos);

    const auto back = io::load_manifest(dir / "manifest.json");
    REQUIRE(back.subjects.size() == 1);
    CHECK(back.subjects[0].group == Group::aphasia);
    CHECK(back.subjects[0].age == 71.5);
    CHECK(fs::equivalent(*back.subjects[0].eeg, eeg));
    CHECK(back.channel_selection == m.channel_selection);
    CHECK_THROWS_AS(back.subject("nobody"), InvalidInput);

    m.subjects.push_back(s);
    io::save_manifest(m, dir / "dup.json");
    CHECK_THROWS_AS(io::load_manifest(dir / "dup.json"), InvalidInput);
    m.subjects.pop_back();
    m.subjects[0].eeg = dir / "nowhere.f32";
    io::save_manifest(m, dir / "missing.json");
    CHECK_THROWS_AS(io::load_manifest(dir / "missing.json"), InvalidInput);
}
