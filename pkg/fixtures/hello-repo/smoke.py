import json
import subprocess
import sys
from pathlib import Path

if __name__ == "__main__":
    config = json.loads(Path("config.json").read_text())
    out = subprocess.run([sys.executable, "hello.py", "greet", config["name"]],
                         capture_output=True, text=True, check=True).stdout
    assert out.strip() == f"Hello, {config['name']}!", out
    print("smoke ok")
