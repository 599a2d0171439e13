/* Control: 10 ints memcpy'd into an alloca sized for 10 ints. */
#include <alloca.h>
#include <string.h>

#include "io.h"

static void good(void)
{
    int * data;
    data = NULL;
    data = (int *)alloca(10*sizeof(int));
    {
        int source[10] = {0};
        memcpy(data, source, 10*sizeof(int));
        printIntLine(data[0]);
    }
}

int main(void)
{
    printLine("Calling good()...");
    good();
    printLine("Finished good()");
    return 0;
}
