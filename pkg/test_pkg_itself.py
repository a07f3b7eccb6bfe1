# builds a wheel, installs it into a clean venv and runs the installed
# package from python and from the shell

if __name__ == "__main__":
    from chkpkg import Package

    with Package() as pkg:
        pkg.run_python_code(
            'import mlconv; '
            'print(mlconv.cost_report(mlconv.variant_config("cnn"))'
            '.total_params)')
        pkg.run_python_code(
            'from pathlib import Path; import mlconv; '
            'assert (Path(mlconv.__file__).parent / "configs" / '
            '"baseline_cnn.cfg").is_file()')
        pkg.run_shell_code('mlconv --version')
        pkg.run_shell_code('mlconv analyze --config baseline_mlconv1 '
                           '--baseline baseline_cnn')

    print("\nPackage is OK!")
