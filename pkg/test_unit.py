import subprocess
import sys
from pathlib import Path
from subprocess import check_call

parent = Path(__file__).parent


def splitter(title: str):
    print()
    print('/' * 80)
    print('\\' * 80)
    print('  ' + title.upper())
    print('\\' * 80)
    print('/' * 80)
    print()


def mlconv(*args: str):
    check_call([sys.executable, '-m', 'mlconv', *args], cwd=parent)


if __name__ == "__main__":
    subprocess.check_call([sys.executable, '-m', 'unittest'])

    splitter("INSTALLING ITSELF")
    check_call([sys.executable, '-m', 'pip', 'install', '-e', '.'], cwd=parent)

    splitter("parameter and speedup tables")
    mlconv('tables')

    splitter("MLconv1 against the dense baseline")
    mlconv('analyze', '--config', 'baseline_mlconv1',
           '--baseline', 'baseline_cnn')

    splitter("cost CSV at 64x64")
    mlconv('analyze', '--config', 'baseline_lr53', '--resolution', '64x64',
           '--csv')

    splitter("forward timing")
    mlconv('bench', '--config', 'baseline_cnn', '--config', 'baseline_mlconv1',
           '--config', 'mlconv6*', '--reps', '3')
