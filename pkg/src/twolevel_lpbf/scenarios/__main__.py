from . import generate

print(f"scenario geometry written to {generate()}")
