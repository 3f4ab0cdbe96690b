"""Solucionador de puzzles espaciales y temporales por difusión de códigos posicionales."""
