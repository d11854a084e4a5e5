"""
Núcleo numérico: diferenciación automática, redes, maestro, estudiante y muestreo
"""
