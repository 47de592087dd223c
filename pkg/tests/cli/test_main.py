# tests/cli/test_main.py
"""Tests for the command-line driver."""

import json

import pytest

from src.cli.main import EXIT_DIAGNOSTICS, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main


def write_device_machine(path) -> str:
    path.write_text(json.dumps({
        "workers": [
            {"id": 0, "arch": "cpu", "memory_node": 0},
            {"id": 1, "arch": "opencl", "memory_node": 1},
        ],
        "bandwidth": [[None, 1e9], [1e9, None]],
        "latency": [[0.0, 1e-5], [1e-5, 0.0]],
    }))
    return str(path)


def write_perf(path) -> str:
    path.write_text(json.dumps({
        "scale_vector/cpu": {"base_seconds": 1e-3},
        "scale_vector/opencl": {"base_seconds": 1e-4},
    }))
    return str(path)


COUNTING_SOURCE = (
    "void t (int *v, int n) __attribute__ ((task))\n"
    "{\n"
    "  for (int i = 0; i < n; i++)\n"
    "    v[0] = v[0] + 1;\n"
    "}\n"
    "int main (void)\n"
    "{\n"
    "  int a[2] __attribute__ ((registered, heap_allocated));\n"
    "  t (a, 1000);\n"
    "  return 0;\n"
    "}\n"
)

class TestCheckCommand:
    """Tests for `taskc check`."""

    def test_warning_keeps_exit_status_zero(self, corpus_dir, capsys):
        # Act
        status = main([
            "check", str(corpus_dir / "one_unregistered_pointer.tc"),
            "--entry", "one_unregistered_pointer",
        ])

        # Assert
        assert status == EXIT_OK
        err = capsys.readouterr().err
        assert "13:11: warning: variable 'q' may be used unregistered" in err

    def test_werror(self, corpus_dir):
        status = main([
            "check", str(corpus_dir / "one_unregistered_pointer.tc"),
            "--entry", "one_unregistered_pointer", "--werror",
        ])
        assert status == EXIT_DIAGNOSTICS

    def test_json_diagnostics(self, corpus_dir, capsys):
        main([
            "check", str(corpus_dir / "one_unregistered_pointer.tc"),
            "--entry", "one_unregistered_pointer", "--diag-format", "json",
        ])
        diagnostics = json.loads(capsys.readouterr().err)
        assert [(d["line"], d["column"], d["severity"]) for d in diagnostics] == [
            (13, 11, "warning"),
        ]

    def test_missing_file_is_a_usage_error(self, tmp_path, capsys):
        assert main(["check", str(tmp_path / "absent.tc")]) == EXIT_USAGE
        assert "taskc: error:" in capsys.readouterr().err

    def test_undecodable_source_is_a_usage_error(self, tmp_path, capsys):
        path = tmp_path / "bad.tc"
        path.write_bytes(b"int x;\xff")
        assert main(["check", str(path)]) == EXIT_USAGE
        err = capsys.readouterr().err
        assert err.startswith("taskc: error: ")
        assert "bad.tc: not valid UTF-8 text (byte 6)" in err

    def test_bad_arguments(self):
        assert main(["check"]) == EXIT_USAGE
        assert main(["compile", "x.tc"]) == EXIT_USAGE


class TestBuildAndRun:
    """Tests for `taskc build` followed by `taskc run`."""

    def test_build_then_run_prints_the_buffers(self, corpus_dir, capsys):
        # Arrange
        artifact = str(corpus_dir / "v.json")

        # Act
        build_status = main(["build", str(corpus_dir / "vector_scale.tc"), "-o", artifact])
        run_status = main(["run", artifact, "--dump-buffers"])

        # Assert
        assert (build_status, run_status) == (EXIT_OK, EXIT_OK)
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("vector: ")
        assert len(lines[0].split()) == 9
        assert lines[1].startswith("makespan: ")

    def test_artifact_does_not_need_the_kernel_file(self, corpus_dir, capsys):
        # Arrange
        artifact = str(corpus_dir / "v.json")
        assert main(["build", str(corpus_dir / "vector_scale.tc"), "-o", artifact]) == EXIT_OK
        (corpus_dir / "vector_scale.cl").unlink()
        trace = corpus_dir / "t.jsonl"

        # Act
        status = main([
            "run", artifact,
            "--machine", write_device_machine(corpus_dir / "m.json"),
            "--perf", write_perf(corpus_dir / "p.json"),
            "--sched", "heft",
            "--trace", str(trace),
        ])

        # Assert
        assert status == EXIT_OK
        events = [json.loads(line) for line in trace.read_text().splitlines()]
        assert [e["worker"] for e in events if e["kind"] == "task"] == [1]

    def test_build_fails_without_the_kernel_file(self, corpus_dir, capsys):
        (corpus_dir / "vector_scale.cl").unlink()
        artifact = corpus_dir / "v.json"
        status = main(["build", str(corpus_dir / "vector_scale.tc"), "-o", str(artifact)])
        assert status == EXIT_DIAGNOSTICS
        assert not artifact.exists()
        assert "kernel file 'vector_scale.cl' not found" in capsys.readouterr().err

    def test_default_output_path(self, corpus_dir):
        assert main(["build", str(corpus_dir / "vector_scale.tc")]) == EXIT_OK
        assert (corpus_dir / "vector_scale.json").exists()

    def test_runtime_failure_exit_status(self, corpus_dir, capsys):
        # Arrange
        artifact = str(corpus_dir / "u.json")
        assert main(["build", str(corpus_dir / "unregistered_call.tc"), "-o", artifact]) == 0

        # Act
        status = main(["run", artifact])

        # Assert
        assert status == EXIT_RUNTIME
        err = capsys.readouterr().err
        assert err.count("attempt to use unregistered pointer") == 1
        assert "u.tc:12: error: attempt to use unregistered pointer" in err

    def test_max_steps_bounds_kernel_runs(self, corpus_dir, capsys):
        # Arrange
        source = corpus_dir / "count.tc"
        source.write_text(COUNTING_SOURCE)
        artifact = str(corpus_dir / "count.json")
        assert main(["build", str(source), "-o", artifact]) == EXIT_OK

        # Act
        limited = main(["run", artifact, "--max-steps", "100"])
        unlimited = main(["run", artifact, "--dump-buffers"])

        # Assert
        assert (limited, unlimited) == (EXIT_RUNTIME, EXIT_OK)
        captured = capsys.readouterr()
        assert "count.tc:9: error: task 't' failed: step limit of 100 exceeded" in captured.err
        assert "a: 1000 0" in captured.out

    @pytest.mark.parametrize("value", ["0", "-3", "many"])
    def test_max_steps_must_be_a_positive_integer(self, corpus_dir, value):
        artifact = str(corpus_dir / "v.json")
        main(["build", str(corpus_dir / "vector_scale.tc"), "-o", artifact])
        assert main(["run", artifact, "--max-steps", value]) == EXIT_USAGE

    def test_invalid_machine_is_a_usage_error(self, corpus_dir, capsys):
        artifact = str(corpus_dir / "v.json")
        main(["build", str(corpus_dir / "vector_scale.tc"), "-o", artifact])
        machine = corpus_dir / "m.json"
        machine.write_text('{"workers": []}')
        assert main(["run", artifact, "--machine", str(machine)]) == EXIT_USAGE
        assert "invalid machine" in capsys.readouterr().err


class TestTraceSummaryCommand:
    """Tests for `taskc trace-summary`."""

    def test_summary_of_a_recorded_trace(self, corpus_dir, capsys):
        # Arrange
        artifact = str(corpus_dir / "v.json")
        trace = str(corpus_dir / "t.jsonl")
        main(["build", str(corpus_dir / "vector_scale.tc"), "-o", artifact])
        main(["run", artifact, "--trace", trace])
        capsys.readouterr()

        # Act
        status = main(["trace-summary", trace])

        # Assert
        assert status == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert "tasks: 1" in out
        assert "transfers: 0" in out
        assert any(line.startswith("worker 0 busy: ") for line in out)

    def test_malformed_trace(self, tmp_path, capsys):
        trace = tmp_path / "t.jsonl"
        trace.write_text("not json\n")
        assert main(["trace-summary", str(trace)]) == EXIT_USAGE
        assert "malformed trace event" in capsys.readouterr().err


class TestStripCommand:
    """Tests for `taskc strip`."""

    def test_plain_program_is_printed(self, corpus_dir, capsys):
        assert main(["strip", str(corpus_dir / "vector_scale.tc")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "__attribute__" not in out
        assert "#pragma" not in out
        assert "int main(void)\n" in out

    @pytest.mark.parametrize("source", ["int main (\n", "int x = `;\n"])
    def test_unparsable_source(self, tmp_path, capsys, source):
        path = tmp_path / "x.tc"
        path.write_text(source)
        assert main(["strip", str(path)]) == EXIT_DIAGNOSTICS
        assert "error:" in capsys.readouterr().err
